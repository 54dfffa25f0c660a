#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "fedlaw/errors.hpp"
#include "fedlaw/mlp.hpp"

namespace fedlaw::data {

using ClassHistogram = std::vector<std::int64_t>;

/// Labeled samples: one feature row per sample.
struct Dataset {
  Eigen::MatrixXf features;
  std::vector<int> labels;
  int num_classes = 0;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
  void validate() const;

  nn::Batch<float> as_batch() const { return {features, labels}; }
};

/// Per-client sample index sets plus the parameters that produced them.
/// Index sets are pairwise disjoint, cover the dataset, and are nonempty.
struct PartitionPlan {
  std::vector<std::vector<Eigen::Index>> client_indices;
  double alpha1 = 0.0;
  double alpha2 = 0.0;  // 0 when not hybrid
  bool hybrid = false;
  std::uint64_t seed = 0;

  int n_clients() const { return static_cast<int>(client_indices.size()); }
};

enum class ProxyMode { Balanced, LongTailed };

/// Gaussian blobs: class k centered at a fixed-seed random mean with
/// unit-scale coordinates, isotropic noise with std `spread`, shuffled
/// sample order.
Dataset make_synthetic(int num_classes, int dim, int per_class, double spread,
                       std::uint64_t seed);

/// Per-class Dirichlet(alpha * 1_n) split; empty clients repaired by moving
/// one sample from the currently largest client.
PartitionPlan dirichlet_partition(const Dataset& dataset, double alpha, int n_clients,
                                  std::uint64_t seed);

/// First half of clients drawn from an n-client Dirichlet(alpha1) split of the
/// full dataset; the leftover samples split over the second half with alpha2.
PartitionPlan hybrid_partition(const Dataset& dataset, double alpha1, double alpha2,
                               int n_clients, std::uint64_t seed);

/// Draws a proxy set out of `source` and returns (proxy, remainder); the
/// remainder serves as the test set. Balanced takes per_class samples of
/// every class; LongTailed gives class k round(per_class * rho^(-k/(K-1))).
std::pair<Dataset, Dataset> build_proxy(const Dataset& source, int per_class,
                                        ProxyMode mode, double rho, std::uint64_t seed);

/// Swaps labels class_a <-> class_b; features untouched.
Dataset corrupt_labels(const Dataset& dataset, int class_a, int class_b);

ClassHistogram class_histogram(const Dataset& dataset);

Dataset subset(const Dataset& dataset, std::span<const Eigen::Index> indices);

/// Interchange file: header line "num_classes,dim,count" (values), then one
/// row "label,f1,...,fdim" per sample.
void save_csv(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path);

}  // namespace fedlaw::data

#pragma once

// Shared fixtures for the unit tests: small deterministic datasets, client
// updates produced by real local training, and finite-difference helpers.

#include <numeric>
#include <vector>

#include "fedlaw/dataset.hpp"
#include "fedlaw/fl.hpp"
#include "fedlaw/mlp.hpp"
#include "fedlaw/rng.hpp"

namespace testutil {

using namespace fedlaw;

template <typename Scalar>
nn::Batch<Scalar> random_batch(Eigen::Index n, int dim, int num_classes, std::uint64_t seed) {
  Rng rng(seed);
  nn::Batch<Scalar> b;
  b.features.resize(n, dim);
  b.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) b.features(i, d) = static_cast<Scalar>(rng.normal());
    b.labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.next_below(
        static_cast<std::uint64_t>(num_classes)));
  }
  return b;
}

template <typename Scalar>
nn::ParamVector<Scalar> random_params(const nn::ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  nn::ParamVector<Scalar> pv{Eigen::VectorX<Scalar>(spec.num_params()), spec.layout()};
  for (Eigen::Index i = 0; i < pv.data.size(); ++i)
    pv.data[i] = static_cast<Scalar>(0.5 * rng.normal());
  return pv;
}

/// Central finite differences of the batch loss w.r.t. every parameter.
inline Eigen::VectorXd fd_model_gradient(const nn::ModelSpec& spec,
                                         const nn::ParamVector<double>& params,
                                         const nn::Batch<double>& batch, double h = 1e-4) {
  Eigen::VectorXd grad(params.data.size());
  for (Eigen::Index i = 0; i < params.data.size(); ++i) {
    auto plus = params, minus = params;
    plus.data[i] += h;
    minus.data[i] -= h;
    grad[i] = (nn::forward(spec, plus, batch).loss - nn::forward(spec, minus, batch).loss) /
              (2.0 * h);
  }
  return grad;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

/// A tiny federated round: synthetic blobs partitioned across clients, one
/// round of real local training from a shared init.
struct MiniRound {
  data::Dataset train;
  data::Dataset proxy;
  data::Dataset test;
  nn::ModelSpec spec;
  nn::ParamVector<float> global_model;
  std::vector<fl::ClientUpdate> updates;
  fl::TrainConfig config;
};

inline MiniRound make_mini_round(int n_clients = 4, double alpha = 0.5,
                                 std::uint64_t seed = 8, double spread = 1.2,
                                 double round_lr = 0.05) {
  MiniRound mr;
  const auto combined = data::make_synthetic(5, 8, 60, spread, seed);
  std::vector<Eigen::Index> tr, te;
  std::vector<int> seen(5, 0);
  for (Eigen::Index i = 0; i < combined.size(); ++i) {
    auto& c = seen[static_cast<std::size_t>(combined.labels[static_cast<std::size_t>(i)])];
    (c < 40 ? tr : te).push_back(i);
    ++c;
  }
  mr.train = data::subset(combined, tr);
  const auto test_source = data::subset(combined, te);
  std::tie(mr.proxy, mr.test) =
      data::build_proxy(test_source, 8, data::ProxyMode::Balanced, 1.0, seed + 1);

  mr.spec = nn::ModelSpec({8, 16, 5});
  mr.global_model = nn::init_model<float>(mr.spec, seed);
  mr.config.local_epochs = 2;
  mr.config.batch_size = 16;

  const auto plan = data::dirichlet_partition(mr.train, alpha, n_clients, seed + 2);
  for (int c = 0; c < n_clients; ++c) {
    const auto client = data::subset(mr.train, plan.client_indices[static_cast<std::size_t>(c)]);
    mr.updates.push_back(fl::local_train(client, mr.spec, mr.global_model, round_lr,
                                         mr.config, c, derive_seed(seed, seed_tag::client, 1,
                                                                   static_cast<std::uint64_t>(c))));
  }
  return mr;
}

inline std::vector<const nn::ParamVector<float>*> models_of(
    const std::vector<fl::ClientUpdate>& updates) {
  std::vector<const nn::ParamVector<float>*> out;
  for (const auto& u : updates) out.push_back(&u.local_model);
  return out;
}

}  // namespace testutil

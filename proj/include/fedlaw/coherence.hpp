#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fedlaw/dataset.hpp"
#include "fedlaw/fl.hpp"

namespace fedlaw::coherence {

/// Pairwise cosine similarities of the clients' pseudo gradients, unit
/// diagonal. Zero-norm gradients get cosine 0 by convention; if any occur
/// and `degenerate` is non-null it is set to true.
Eigen::MatrixXd pairwise_coherence(std::span<const fl::ClientUpdate> updates,
                                   bool* degenerate = nullptr);

/// Cohort coherence (1/m) * sum_{i != j} lambda_i lambda_j cos(g_i, g_j).
double cohort_coherence(std::span<const fl::ClientUpdate> updates,
                        const Eigen::VectorXd& lambda);
double cohort_coherence(const Eigen::MatrixXd& pairwise, const Eigen::VectorXd& lambda);

struct CoherenceRecord {
  int round = 0;
  Eigen::MatrixXd pairwise;
  double cohort = 0.0;
  bool degenerate = false;
};

/// First-order prediction of the loss change for a step of size eta along
/// g = sum_i lambda_i g_i, with the pseudo gradient standing in for the loss
/// gradient:  delta L ~= -eta * <g, g>.
double taylor_loss_delta(std::span<const fl::ClientUpdate> updates,
                         const Eigen::VectorXd& lambda, double eta);

/// Same first-order prediction with an explicit reference gradient for the
/// loss being tracked:  delta L ~= -eta * <ref, g>. Supplying the analytic
/// loss gradient at the current model removes the pseudo-gradient scale
/// mismatch and leaves only the curvature term as error.
double taylor_loss_delta(std::span<const fl::ClientUpdate> updates,
                         const Eigen::VectorXd& lambda, double eta,
                         const nn::ParamVector<float>& hessian_free_ref_grad);

/// Cosine similarity between the lambda-weighted cohort class distribution
/// and the global class distribution; 1 when they coincide.
double heterogeneity_coherence(const std::vector<data::ClassHistogram>& cohort_histograms,
                               const Eigen::VectorXd& lambda,
                               const data::ClassHistogram& global_histogram);

/// First round t (1-based) with cohort coherence <= 0 that stays <= 0.05
/// for the next 3 rounds; nullopt when no such round is confirmed.
std::optional<int> detect_critical_point(std::span<const double> cohort_series);

struct NormRecord {
  int round = 0;
  double opt_norm = 0.0;  // ||gamma * eta_g * g_g||
  double reg_norm = 0.0;  // ||(1 - gamma) * w_g||
  std::optional<double> r;  // opt_norm / reg_norm, undefined at gamma = 1
};

NormRecord norm_decomposition(const nn::ParamVector<float>& global_model,
                              const nn::ParamVector<float>& global_gradient, double gamma,
                              double eta_g);

struct PearsonResult {
  double vs_data_size = 0.0;
  double vs_heterogeneity = 0.0;
  double vs_product = 0.0;
};

/// Pearson correlation of accumulated aggregation weights against data size,
/// heterogeneity degree, and their product.
PearsonResult pearson_weight_correlation(std::span<const double> accumulated_lambda,
                                         std::span<const double> data_sizes,
                                         std::span<const double> heterogeneity_degrees);

/// Histogram of parameter values; out-of-range values fall into the end bins,
/// so counts always sum to the parameter count.
std::vector<std::int64_t> param_histogram(const nn::ParamVector<float>& params,
                                          std::span<const double> bin_edges);

/// Reciprocal of the variance of a client's normalized class distribution.
double heterogeneity_degree(const data::ClassHistogram& histogram);

struct SimplexGridPoint {
  int i = 0, j = 0, k = 0;
  double loss = 0.0;
};

struct SimplexGrid {
  int resolution = 0;
  std::vector<SimplexGridPoint> points;
  SimplexGridPoint argmin;
};

/// Proxy/test loss of w = sum lambda_i w_i over the barycentric grid
/// (i/R, j/R, k/R), i + j + k = R, for exactly three models.
SimplexGrid simplex_grid_eval(const nn::ModelSpec& spec,
                              const std::vector<const nn::ParamVector<float>*>& models,
                              const data::Dataset& eval_set, int resolution);

/// Writes the grid as CSV rows "i,j,k,loss".
void save_simplex_grid(const SimplexGrid& grid, const std::filesystem::path& path);

}  // namespace fedlaw::coherence

#include "fedlaw/coherence.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <string_view>

#include "fedlaw/law.hpp"

namespace fedlaw::coherence {

Eigen::MatrixXd pairwise_coherence(std::span<const fl::ClientUpdate> updates,
                                   bool* degenerate) {
  const auto m = static_cast<Eigen::Index>(updates.size());
  Eigen::MatrixXd cos = Eigen::MatrixXd::Identity(m, m);
  std::vector<double> norms(updates.size());
  bool any_zero = false;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    norms[i] = nn::norm(updates[i].pseudo_gradient);
    if (norms[i] == 0.0) any_zero = true;
  }
  for (std::size_t i = 0; i < updates.size(); ++i) {
    for (std::size_t j = i + 1; j < updates.size(); ++j) {
      double c = 0.0;  // zero-norm gradients get cosine 0 by convention
      if (norms[i] > 0.0 && norms[j] > 0.0)
        c = nn::dot(updates[i].pseudo_gradient, updates[j].pseudo_gradient) /
            (norms[i] * norms[j]);
      cos(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c;
      cos(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = c;
    }
  }
  if (degenerate) *degenerate = any_zero;
  return cos;
}

double cohort_coherence(const Eigen::MatrixXd& pairwise, const Eigen::VectorXd& lambda) {
  const Eigen::Index m = pairwise.rows();
  if (pairwise.cols() != m || lambda.size() != m)
    throw shape_error("cohort_coherence operand sizes mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (i != j) acc += lambda[i] * lambda[j] * pairwise(i, j);
  return acc / static_cast<double>(m);
}

double cohort_coherence(std::span<const fl::ClientUpdate> updates,
                        const Eigen::VectorXd& lambda) {
  return cohort_coherence(pairwise_coherence(updates), lambda);
}

double taylor_loss_delta(std::span<const fl::ClientUpdate> updates,
                         const Eigen::VectorXd& lambda, double eta) {
  const auto g = fl::weighted_pseudo_gradient(updates, lambda);
  return -eta * nn::dot(g, g);
}

double taylor_loss_delta(std::span<const fl::ClientUpdate> updates,
                         const Eigen::VectorXd& lambda, double eta,
                         const nn::ParamVector<float>& hessian_free_ref_grad) {
  const auto g = fl::weighted_pseudo_gradient(updates, lambda);
  return -eta * nn::dot(hessian_free_ref_grad, g);
}

double heterogeneity_coherence(const std::vector<data::ClassHistogram>& cohort_histograms,
                               const Eigen::VectorXd& lambda,
                               const data::ClassHistogram& global_histogram) {
  if (cohort_histograms.size() != static_cast<std::size_t>(lambda.size()))
    throw shape_error("cohort histogram count does not match lambda length");
  if (global_histogram.empty()) throw std::domain_error("empty global histogram");
  const auto k = static_cast<Eigen::Index>(global_histogram.size());

  std::int64_t global_total = 0;
  for (auto c : global_histogram) global_total += c;
  if (global_total == 0) throw std::domain_error("global histogram is all zero");
  Eigen::VectorXd global_dist(k);
  for (Eigen::Index c = 0; c < k; ++c)
    global_dist[c] = static_cast<double>(global_histogram[static_cast<std::size_t>(c)]) /
                     static_cast<double>(global_total);

  // lambda-weighted mix of the clients' normalized class distributions.
  Eigen::VectorXd cohort_dist = Eigen::VectorXd::Zero(k);
  for (std::size_t i = 0; i < cohort_histograms.size(); ++i) {
    const auto& h = cohort_histograms[i];
    if (static_cast<Eigen::Index>(h.size()) != k)
      throw shape_error("cohort histogram length mismatch");
    std::int64_t total = 0;
    for (auto c : h) total += c;
    if (total == 0) continue;
    for (Eigen::Index c = 0; c < k; ++c)
      cohort_dist[c] += lambda[static_cast<Eigen::Index>(i)] *
                        static_cast<double>(h[static_cast<std::size_t>(c)]) /
                        static_cast<double>(total);
  }

  const double denom = cohort_dist.norm() * global_dist.norm();
  if (denom == 0.0) return 0.0;
  return cohort_dist.dot(global_dist) / denom;
}

std::optional<int> detect_critical_point(std::span<const double> cohort_series) {
  if (cohort_series.size() < 4)
    throw shape_error("critical-point detection needs a series of length >= 4");
  constexpr double kBand = 0.05;
  constexpr std::size_t kPersist = 3;
  for (std::size_t t = 0; t + kPersist < cohort_series.size(); ++t) {
    if (cohort_series[t] > 0.0) continue;
    bool stays = true;
    for (std::size_t u = t + 1; u <= t + kPersist; ++u)
      if (cohort_series[u] > kBand) {
        stays = false;
        break;
      }
    if (stays) return static_cast<int>(t) + 1;  // 1-based round
  }
  return std::nullopt;
}

NormRecord norm_decomposition(const nn::ParamVector<float>& global_model,
                              const nn::ParamVector<float>& global_gradient, double gamma,
                              double eta_g) {
  NormRecord rec;
  rec.opt_norm = std::abs(gamma * eta_g) * nn::norm(global_gradient);
  rec.reg_norm = std::abs(1.0 - gamma) * nn::norm(global_model);
  if (rec.reg_norm > 0.0) rec.r = rec.opt_norm / rec.reg_norm;
  return rec;
}

namespace {

double pearson(std::span<const double> a, std::span<const double> b) {
  const auto n = static_cast<double>(a.size());
  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= n;
  mean_b /= n;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0)
    throw std::domain_error("pearson correlation undefined for zero-variance input");
  return cov / std::sqrt(var_a * var_b);
}

}  // namespace

PearsonResult pearson_weight_correlation(std::span<const double> accumulated_lambda,
                                         std::span<const double> data_sizes,
                                         std::span<const double> heterogeneity_degrees) {
  if (accumulated_lambda.size() != data_sizes.size() ||
      accumulated_lambda.size() != heterogeneity_degrees.size())
    throw shape_error("pearson inputs must have equal length");
  if (accumulated_lambda.size() < 3)
    throw shape_error("pearson needs at least 3 observations");
  std::vector<double> product(accumulated_lambda.size());
  for (std::size_t i = 0; i < product.size(); ++i)
    product[i] = data_sizes[i] * heterogeneity_degrees[i];
  return {pearson(accumulated_lambda, data_sizes),
          pearson(accumulated_lambda, heterogeneity_degrees),
          pearson(accumulated_lambda, product)};
}

std::vector<std::int64_t> param_histogram(const nn::ParamVector<float>& params,
                                          std::span<const double> bin_edges) {
  if (bin_edges.size() < 2) throw shape_error("histogram needs at least 2 bin edges");
  for (std::size_t i = 1; i < bin_edges.size(); ++i)
    if (!(bin_edges[i] > bin_edges[i - 1]))
      throw shape_error("histogram bin edges must be strictly increasing");
  std::vector<std::int64_t> counts(bin_edges.size() - 1, 0);
  for (Eigen::Index i = 0; i < params.data.size(); ++i) {
    const double v = params.data[i];
    // Out-of-range values fall into the end bins.
    std::size_t bin = 0;
    if (v >= bin_edges[bin_edges.size() - 1]) {
      bin = counts.size() - 1;
    } else {
      const auto it = std::upper_bound(bin_edges.begin(), bin_edges.end(), v);
      bin = (it == bin_edges.begin())
                ? 0
                : static_cast<std::size_t>(it - bin_edges.begin()) - 1;
      bin = std::min(bin, counts.size() - 1);
    }
    counts[bin] += 1;
  }
  return counts;
}

double heterogeneity_degree(const data::ClassHistogram& histogram) {
  if (histogram.empty()) throw std::domain_error("empty histogram");
  const auto k = static_cast<double>(histogram.size());
  double total = 0.0;
  for (auto c : histogram) total += static_cast<double>(c);
  if (total == 0.0) throw std::domain_error("all-zero histogram");
  double var = 0.0;
  const double mean = 1.0 / k;
  for (auto c : histogram) {
    const double d = static_cast<double>(c) / total - mean;
    var += d * d;
  }
  var /= k;
  if (var == 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / var;
}

void save_simplex_grid(const SimplexGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot open simplex grid file for writing: " + path.string());
  out << "i,j,k,loss\n";
  char buf[64];
  for (const auto& p : grid.points) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), p.loss);
    out << p.i << ',' << p.j << ',' << p.k << ',' << std::string_view(buf, end) << '\n';
  }
  if (!out) throw io_error("simplex grid write failed: " + path.string());
}

SimplexGrid simplex_grid_eval(const nn::ModelSpec& spec,
                              const std::vector<const nn::ParamVector<float>*>& models,
                              const data::Dataset& eval_set, int resolution) {
  if (models.size() != 3) throw std::domain_error("simplex grid needs exactly 3 models");
  if (resolution < 2) throw std::domain_error("simplex grid resolution must be >= 2");
  if (eval_set.size() == 0) throw std::domain_error("simplex grid needs a nonempty eval set");

  const auto batch = eval_set.as_batch();
  SimplexGrid grid;
  grid.resolution = resolution;
  grid.argmin.loss = std::numeric_limits<double>::infinity();
  Eigen::VectorXd lambda(3);
  for (int i = 0; i <= resolution; ++i) {
    for (int j = 0; i + j <= resolution; ++j) {
      const int k = resolution - i - j;
      lambda << static_cast<double>(i) / resolution, static_cast<double>(j) / resolution,
          static_cast<double>(k) / resolution;
      const auto w = law::combine_models(models, 1.0, lambda);
      const double loss = nn::forward(spec, w, batch).loss;
      grid.points.push_back({i, j, k, loss});
      if (loss < grid.argmin.loss) grid.argmin = grid.points.back();
    }
  }
  return grid;
}

}  // namespace fedlaw::coherence

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedlaw/dataset.hpp"
#include "fedlaw/errors.hpp"
#include "fedlaw/mlp.hpp"
#include "fedlaw/param_vector.hpp"

namespace fedlaw::fl {

/// What a client hands back after local training: the trained model, its
/// pseudo gradient (global minus local), and data-distribution metadata.
struct ClientUpdate {
  int client_id = 0;
  nn::ParamVector<float> local_model;
  nn::ParamVector<float> pseudo_gradient;  // w_g - w_i, exactly
  std::int64_t data_size = 0;
  data::ClassHistogram histogram;
  std::int64_t steps_taken = 0;
};

/// Decoupled aggregation weights: positive shrinking factor gamma and the
/// simplex of relative client weights lambda.
struct AggWeights {
  double gamma = 1.0;
  Eigen::VectorXd lambda;

  void validate() const {
    if (!(gamma > 0.0)) throw shape_error("gamma must be > 0");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
      if (lambda[i] < 0.0) throw shape_error("lambda entries must be >= 0");
      sum += lambda[i];
    }
    if (std::abs(sum - 1.0) > 1e-9) throw shape_error("lambda must sum to 1");
  }
};

/// Pre-drawn participation schedule: the m client ids sampled for every
/// round, generated once per seed and replayed identically across runs.
struct CohortSchedule {
  std::uint64_t seed = 0;
  int n_clients = 0;
  int m = 0;
  std::vector<std::vector<int>> rounds;

  static CohortSchedule generate(std::uint64_t seed, int n_clients, int m, int n_rounds);
  void save(const std::filesystem::path& path) const;
  static CohortSchedule load(const std::filesystem::path& path);
};

/// Client-side training knobs plus the server's global learning rate.
struct TrainConfig {
  int local_epochs = 2;
  int batch_size = 32;
  double lr0 = 0.05;
  double lr_decay = 0.99;  // per-round multiplicative
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double global_lr = 1.0;  // eta_g
  double fedprox_mu = 0.0;  // 0 disables the proximal term

  void validate() const {
    if (local_epochs < 1) throw config_error("train.local_epochs must be >= 1");
    if (batch_size < 1) throw config_error("train.batch_size must be >= 1");
    if (!(lr0 > 0.0)) throw config_error("train.lr0 must be > 0");
    if (!(global_lr > 0.0)) throw config_error("train.global_lr must be > 0");
    if (fedprox_mu < 0.0) throw config_error("train.fedprox_mu must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw config_error("train.momentum must be in [0,1)");
    if (weight_decay < 0.0) throw config_error("train.weight_decay must be >= 0");
  }
};

/// E epochs of shuffled mini-batch SGD starting from the global model.
/// Deterministic given client_seed; momentum buffers start at zero.
ClientUpdate local_train(const data::Dataset& client_data, const nn::ModelSpec& spec,
                         const nn::ParamVector<float>& global_model, double round_lr,
                         const TrainConfig& config, int client_id,
                         std::uint64_t client_seed);

/// Decoupled weighted aggregation in pseudo-gradient form:
///   w' = gamma * w_g - eta_g * sum_i (gamma * lambda_i) * g_i,
/// which at eta_g = 1 equals the model average gamma * sum_i lambda_i * w_i.
nn::ParamVector<float> aggregate(std::span<const ClientUpdate> updates,
                                 const AggWeights& weights,
                                 const nn::ParamVector<float>& global_model, double eta_g);

/// Vanilla weights: lambda_i proportional to client data sizes, gamma = 1.
AggWeights datasize_weights(std::span<const ClientUpdate> updates);

/// The ids participating in `round` (1-based).
const std::vector<int>& sample_cohort(const CohortSchedule& schedule, int round);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Top-1 accuracy (ties broken toward the lowest class index) and mean
/// cross-entropy on a held-out set.
EvalResult evaluate(const nn::ModelSpec& spec, const nn::ParamVector<float>& params,
                    const data::Dataset& test_set);

/// lambda-weighted pseudo gradient sum_i lambda_i * g_i.
nn::ParamVector<float> weighted_pseudo_gradient(std::span<const ClientUpdate> updates,
                                                const Eigen::VectorXd& lambda);

}  // namespace fedlaw::fl

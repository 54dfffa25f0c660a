#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedlaw/coherence.hpp"
#include "fedlaw/dataset.hpp"
#include "fedlaw/fl.hpp"
#include "fedlaw/law.hpp"

namespace fedlaw::fl {

enum class PolicyKind {
  FedAvg,
  FixedGamma,
  AdaptiveGWS,
  AttentiveLAW,
  EarlyStoppedLAW,
  FedLAW,
  FedLAWSWA,
  ServerFT,
};

/// One of the eight aggregation-weight policies plus its parameters.
struct WeightPolicy {
  PolicyKind kind = PolicyKind::FedAvg;
  double fixed_gamma = 1.0;  // FixedGamma
  int stop_round = 0;        // EarlyStoppedLAW
  bool freeze = false;       // FedLAW with learning disabled (diagnostics)
};

std::string policy_name(const WeightPolicy& policy);
PolicyKind parse_policy_kind(const std::string& name);

/// Everything logged about one communication round.
struct RoundRecord {
  int round = 0;
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  double proxy_loss_before = 0.0;  // at (gamma=1, data-size lambda)
  double proxy_loss_after = 0.0;   // at the weights actually applied
  double gamma = 1.0;
  std::vector<int> cohort_ids;
  Eigen::VectorXd lambda;  // aligned with cohort_ids
  double cohort_coherence = 0.0;
  double hetero_coherence = 0.0;
  double opt_norm = 0.0;
  double reg_norm = 0.0;
  std::optional<double> r;
  double wallclock_ms = 0.0;  // not part of the deterministic CSV output
};

/// Mutable server state threaded through the round loop.
struct RoundState {
  nn::ParamVector<float> global_model;
  double lr = 0.0;
  int round = 0;  // rounds completed so far
};

/// Read-only per-run context shared by every round.
struct RunContext {
  const nn::ModelSpec& spec;
  const std::vector<data::Dataset>& clients;  // all clients, indexed by id
  const CohortSchedule& schedule;
  const data::Dataset& proxy;
  const data::Dataset& test_set;
  const data::ClassHistogram& global_histogram;
  TrainConfig train;
  law::ServerOptConfig server_opt;
  std::uint64_t run_seed = 0;
};

/// Advances one communication round: samples the cohort, trains clients,
/// applies the weight policy, aggregates, evaluates, and emits diagnostics.
RoundRecord run_round(RoundState& state, const RunContext& ctx, const WeightPolicy& policy);

}  // namespace fedlaw::fl

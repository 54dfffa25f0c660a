#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedlaw/dataset.hpp"
#include "fedlaw/round.hpp"

namespace fedlaw::exp {

struct DatasetBlock {
  std::string kind = "synthetic";  // synthetic | csv
  int num_classes = 10;
  int dim = 16;
  int train_per_class = 200;
  int test_per_class = 100;
  double spread = 2.2;
  std::uint64_t seed = 8;
  std::string train_csv;
  std::string test_csv;
};

struct PartitionBlock {
  std::string kind = "dirichlet";  // dirichlet | hybrid
  double alpha = 1.0;
  double alpha1 = 10.0;
  double alpha2 = 0.1;
  int n_clients = 20;
};

struct CohortBlock {
  int m = 20;
  int rounds = 100;
};

struct ModelBlock {
  std::vector<int> hidden = {128, 128};
};

struct PolicyBlock {
  std::string name = "fedavg";
  double gamma = 0.95;  // fixed_gamma
  int stop_round = 20;  // early_stopped_law
  bool freeze = false;  // fedlaw only
};

struct ProxyBlock {
  int per_class = 10;
  std::string mode = "balanced";  // balanced | long_tailed
  double rho = 10.0;
};

struct CorruptionBlock {
  double fraction = 0.0;  // corrupted clients are the lowest ids
  int class_a = 0;
  int class_b = 1;
};

/// Fully resolved experiment description; one config drives one scenario.
struct ExperimentConfig {
  DatasetBlock dataset;
  PartitionBlock partition;
  CohortBlock cohort;
  ModelBlock model;
  fl::TrainConfig train;
  PolicyBlock policy;
  law::ServerOptConfig server_opt;
  ProxyBlock proxy;
  CorruptionBlock corruption;
  std::vector<std::uint64_t> seeds = {8, 9, 10};
  std::string out_dir = "out";

  void validate() const;
  fl::WeightPolicy weight_policy() const;
  nn::ModelSpec model_spec(int input_dim, int num_classes) const;
};

/// Parses the key/section config text format; throws config_error naming the
/// offending field on any problem.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text);

/// Canonical echo of the effective config (defaults resolved); parsing the
/// echo reproduces the config exactly.
std::string format_config(const ExperimentConfig& config);

/// The materialized per-seed scenario every command runs against.
struct Scenario {
  data::Dataset train;
  data::Dataset proxy;
  data::Dataset test;
  data::PartitionPlan plan;
  std::vector<data::Dataset> clients;  // post-corruption
  std::vector<bool> corrupted;
  data::ClassHistogram global_histogram;
  nn::ModelSpec spec;
};

Scenario build_scenario(const ExperimentConfig& config, std::uint64_t run_seed);

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<fl::RoundRecord> records;
  double last10_mean = 0.0;
  std::optional<int> critical_point;
  double learned_gamma_mean = 0.0;
  nn::ParamVector<float> final_model;
  Eigen::VectorXd accumulated_lambda;  // per client id, summed over rounds
};

struct RunResult {
  std::string policy;
  std::vector<SeedResult> per_seed;
  double last10_mean = 0.0;
  double last10_std = 0.0;
};

/// Runs one policy across all seeds. When schedule_dir is given, cohort
/// schedules are loaded from (or first written to) that directory so that
/// several policies replay identical cohorts.
RunResult run_policy(const ExperimentConfig& config, const fl::WeightPolicy& policy,
                     const std::filesystem::path& out_dir,
                     const std::filesystem::path& schedule_dir = {});

double last10_mean_accuracy(const std::vector<fl::RoundRecord>& records);

// CLI entry points; return the process exit code (0 ok, 1 config, 2 runtime).
struct CliOverrides {
  std::optional<std::string> out_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<double> gammas;
  std::vector<std::string> policies;
};

int cmd_run(const std::string& config_path, const CliOverrides& overrides);
int cmd_sweep_gamma(const std::string& config_path, const CliOverrides& overrides);
int cmd_compare(const std::string& config_path, const CliOverrides& overrides);
int cmd_partition_inspect(const std::string& config_path, const CliOverrides& overrides);
int cmd_coherence_report(const std::string& run_dir);

// Deterministic number formatting shared by all CSV/JSON emitters.
std::string fmt_double(double v);
std::string round_record_csv_header();
std::string round_record_csv_row(const fl::RoundRecord& record);

}  // namespace fedlaw::exp

// Command-line driver for the federated aggregation toolkit.
//
// Subcommands: run | sweep-gamma | compare | partition-inspect |
// coherence-report. Exit codes: 0 success, 1 config error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "fedlaw/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator with learnable aggregation weights"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string run_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<double> gammas;
  std::vector<std::string> policies;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Experiment config file")->required();
    cmd->add_option("--out", out_dir, "Output directory (overrides config)");
    cmd->add_option("--seeds", seeds, "Seeds (overrides config)")->delimiter(',');
  };

  auto* run = app.add_subcommand("run", "Run the configured policy across all seeds");
  add_common(run);

  auto* sweep = app.add_subcommand("sweep-gamma", "Fixed-gamma sweep with shared schedules");
  add_common(sweep);
  sweep->add_option("--gammas", gammas, "Shrinking factors to sweep")->delimiter(',');

  auto* compare = app.add_subcommand("compare", "Run several policies on identical scenarios");
  add_common(compare);
  compare->add_option("--policies", policies, "Policies to compare")
      ->delimiter(',')
      ->required();

  auto* inspect = app.add_subcommand("partition-inspect", "Emit per-client class histograms");
  add_common(inspect);

  auto* report =
      app.add_subcommand("coherence-report", "Extract coherence series from a finished run");
  report->add_option("--out", run_dir, "Run output directory to analyze")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // bad flags are config errors
  }

  fedlaw::exp::CliOverrides overrides;
  if (!out_dir.empty()) overrides.out_dir = out_dir;
  overrides.seeds = seeds;
  overrides.gammas = gammas;
  overrides.policies = policies;

  if (run->parsed()) return fedlaw::exp::cmd_run(config_path, overrides);
  if (sweep->parsed()) return fedlaw::exp::cmd_sweep_gamma(config_path, overrides);
  if (compare->parsed()) return fedlaw::exp::cmd_compare(config_path, overrides);
  if (inspect->parsed()) return fedlaw::exp::cmd_partition_inspect(config_path, overrides);
  if (report->parsed()) return fedlaw::exp::cmd_coherence_report(run_dir);
  return 1;
}

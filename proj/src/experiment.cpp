#include "fedlaw/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "fedlaw/coherence.hpp"
#include "fedlaw/rng.hpp"

namespace fedlaw::exp {

namespace fs = std::filesystem;
using nlohmann::json;

Scenario build_scenario(const ExperimentConfig& config, std::uint64_t run_seed) {
  Scenario s;
  data::Dataset test_source;
  if (config.dataset.kind == "synthetic") {
    // One draw covers train and test so both halves share the class centers;
    // the split takes the first train_per_class occurrences of each class.
    const auto combined = data::make_synthetic(
        config.dataset.num_classes, config.dataset.dim,
        config.dataset.train_per_class + config.dataset.test_per_class,
        config.dataset.spread, config.dataset.seed);
    std::vector<Eigen::Index> train_idx, test_idx;
    std::vector<int> seen(static_cast<std::size_t>(combined.num_classes), 0);
    for (Eigen::Index i = 0; i < combined.size(); ++i) {
      auto& count = seen[static_cast<std::size_t>(combined.labels[static_cast<std::size_t>(i)])];
      (count < config.dataset.train_per_class ? train_idx : test_idx).push_back(i);
      ++count;
    }
    s.train = data::subset(combined, train_idx);
    test_source = data::subset(combined, test_idx);
  } else {
    s.train = data::load_csv(config.dataset.train_csv);
    test_source = data::load_csv(config.dataset.test_csv);
    if (s.train.num_classes != test_source.num_classes || s.train.dim() != test_source.dim())
      throw config_error("train/test csv datasets disagree on classes or dim");
  }

  data::ProxyMode mode =
      config.proxy.mode == "balanced" ? data::ProxyMode::Balanced : data::ProxyMode::LongTailed;
  std::tie(s.proxy, s.test) = data::build_proxy(test_source, config.proxy.per_class, mode,
                                                config.proxy.rho,
                                                derive_seed(run_seed, seed_tag::proxy));

  if (config.partition.kind == "dirichlet")
    s.plan = data::dirichlet_partition(s.train, config.partition.alpha,
                                       config.partition.n_clients,
                                       derive_seed(run_seed, seed_tag::partition));
  else
    s.plan = data::hybrid_partition(s.train, config.partition.alpha1, config.partition.alpha2,
                                    config.partition.n_clients,
                                    derive_seed(run_seed, seed_tag::partition));

  const int n = config.partition.n_clients;
  const int n_corrupted = static_cast<int>(std::llround(config.corruption.fraction * n));
  s.clients.reserve(static_cast<std::size_t>(n));
  s.corrupted.assign(static_cast<std::size_t>(n), false);
  for (int c = 0; c < n; ++c) {
    data::Dataset client = data::subset(s.train, s.plan.client_indices[static_cast<std::size_t>(c)]);
    if (c < n_corrupted) {  // corrupted clients are the lowest ids
      client = data::corrupt_labels(client, config.corruption.class_a, config.corruption.class_b);
      s.corrupted[static_cast<std::size_t>(c)] = true;
    }
    s.clients.push_back(std::move(client));
  }

  s.global_histogram.assign(static_cast<std::size_t>(s.train.num_classes), 0);
  for (const auto& client : s.clients) {
    const auto h = data::class_histogram(client);
    for (std::size_t k = 0; k < h.size(); ++k) s.global_histogram[k] += h[k];
  }

  s.spec = config.model_spec(static_cast<int>(s.train.dim()), s.train.num_classes);
  return s;
}

double last10_mean_accuracy(const std::vector<fl::RoundRecord>& records) {
  if (records.empty()) return 0.0;
  const std::size_t take = std::min<std::size_t>(10, records.size());
  double acc = 0.0;
  for (std::size_t i = records.size() - take; i < records.size(); ++i)
    acc += records[i].test_accuracy;
  return acc / static_cast<double>(take);
}

std::string round_record_csv_header() {
  return "round,test_accuracy,test_loss,proxy_loss_before,proxy_loss_after,gamma,"
         "cohort_coherence,hetero_coherence,opt_norm,reg_norm,r,lambda";
}

std::string round_record_csv_row(const fl::RoundRecord& rec) {
  std::ostringstream out;
  out << rec.round << ',' << fmt_double(rec.test_accuracy) << ',' << fmt_double(rec.test_loss)
      << ',' << fmt_double(rec.proxy_loss_before) << ',' << fmt_double(rec.proxy_loss_after)
      << ',' << fmt_double(rec.gamma) << ',' << fmt_double(rec.cohort_coherence) << ','
      << fmt_double(rec.hetero_coherence) << ',' << fmt_double(rec.opt_norm) << ','
      << fmt_double(rec.reg_norm) << ','
      << (rec.r ? fmt_double(*rec.r) : std::string("nan")) << ',';
  for (std::size_t i = 0; i < rec.cohort_ids.size(); ++i)
    out << (i ? "|" : "") << rec.cohort_ids[i] << ':'
        << fmt_double(rec.lambda[static_cast<Eigen::Index>(i)]);
  return out.str();
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw io_error("write failed: " + path.string());
}

void write_rounds_csv(const fs::path& path, const std::vector<fl::RoundRecord>& records) {
  std::ostringstream out;
  out << round_record_csv_header() << '\n';
  for (const auto& rec : records) out << round_record_csv_row(rec) << '\n';
  write_text(path, out.str());
}

void write_lambda_accum_csv(const fs::path& path, const Scenario& scenario,
                            const Eigen::VectorXd& accumulated) {
  std::ostringstream out;
  out << "client_id,data_size,heterogeneity_degree,accumulated_lambda\n";
  for (Eigen::Index c = 0; c < accumulated.size(); ++c) {
    const auto& client = scenario.clients[static_cast<std::size_t>(c)];
    out << c << ',' << client.size() << ','
        << fmt_double(coherence::heterogeneity_degree(data::class_histogram(client))) << ','
        << fmt_double(accumulated[c]) << '\n';
  }
  write_text(path, out.str());
}

double mean_of(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return xs.empty() ? 0.0 : acc / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double mu = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

json summary_json(const RunResult& result, const std::vector<std::uint64_t>& seeds) {
  json per_seed = json::object();
  json critical = json::array();
  std::vector<double> gammas;
  for (const auto& sr : result.per_seed) {
    json entry;
    entry["last10_mean"] = sr.last10_mean;
    entry["learned_gamma_mean"] = sr.learned_gamma_mean;
    if (sr.critical_point)
      entry["critical_point"] = *sr.critical_point;
    else
      entry["critical_point"] = nullptr;
    per_seed[std::to_string(sr.seed)] = entry;
    if (sr.critical_point)
      critical.push_back(*sr.critical_point);
    else
      critical.push_back(nullptr);
    gammas.push_back(sr.learned_gamma_mean);
  }
  json out;
  out["policy"] = result.policy;
  out["seeds"] = seeds;
  out["last10_mean"] = result.last10_mean;
  out["last10_std"] = result.last10_std;
  out["critical_point"] = critical;
  out["learned_gamma_mean"] = mean_of(gammas);
  out["per_seed"] = per_seed;
  return out;
}

}  // namespace

RunResult run_policy(const ExperimentConfig& config, const fl::WeightPolicy& policy,
                     const fs::path& out_dir, const fs::path& schedule_dir) {
  config.validate();
  fs::create_directories(out_dir);

  RunResult result;
  result.policy = fl::policy_name(policy);
  std::vector<double> last10s;

  for (const std::uint64_t seed : config.seeds) {
    Scenario scenario = build_scenario(config, seed);
    const fs::path seed_dir = out_dir / ("seed_" + std::to_string(seed));
    fs::create_directories(seed_dir);

    // Schedules persist to disk once and replay from the file so that every
    // policy sharing schedule_dir sees identical cohorts.
    fs::path schedule_path = seed_dir / "schedule.csv";
    if (!schedule_dir.empty()) {
      fs::create_directories(schedule_dir);
      schedule_path = schedule_dir / ("seed_" + std::to_string(seed) + ".csv");
    }
    if (!fs::exists(schedule_path)) {
      const auto generated =
          fl::CohortSchedule::generate(derive_seed(seed, seed_tag::cohort), config.partition.n_clients,
                                       config.cohort.m, config.cohort.rounds);
      generated.save(schedule_path);
    }
    const fl::CohortSchedule schedule = fl::CohortSchedule::load(schedule_path);
    if (schedule.n_clients != config.partition.n_clients || schedule.m != config.cohort.m ||
        static_cast<int>(schedule.rounds.size()) < config.cohort.rounds)
      throw io_error("existing schedule file does not match the configured scenario: " +
                     schedule_path.string());
    if (!schedule_dir.empty()) schedule.save(seed_dir / "schedule.csv");

    fl::RunContext ctx{scenario.spec,    scenario.clients, schedule,
                       scenario.proxy,   scenario.test,    scenario.global_histogram,
                       config.train,     config.server_opt, seed};

    fl::RoundState state;
    state.global_model = nn::init_model<float>(scenario.spec, seed);
    state.lr = config.train.lr0;
    state.round = 0;

    SeedResult sr;
    sr.seed = seed;
    sr.accumulated_lambda = Eigen::VectorXd::Zero(config.partition.n_clients);
    sr.records.reserve(static_cast<std::size_t>(config.cohort.rounds));
    for (int r = 0; r < config.cohort.rounds; ++r) {
      sr.records.push_back(fl::run_round(state, ctx, policy));
      const auto& rec = sr.records.back();
      for (std::size_t i = 0; i < rec.cohort_ids.size(); ++i)
        sr.accumulated_lambda[rec.cohort_ids[i]] += rec.lambda[static_cast<Eigen::Index>(i)];
    }

    sr.last10_mean = last10_mean_accuracy(sr.records);
    std::vector<double> cohort_series, gammas;
    for (const auto& rec : sr.records) {
      cohort_series.push_back(rec.cohort_coherence);
      gammas.push_back(rec.gamma);
    }
    if (cohort_series.size() >= 4)
      sr.critical_point = coherence::detect_critical_point(cohort_series);
    sr.learned_gamma_mean = mean_of(gammas);
    sr.final_model = state.global_model;

    write_rounds_csv(seed_dir / "rounds.csv", sr.records);
    write_lambda_accum_csv(seed_dir / "lambda_accum.csv", scenario, sr.accumulated_lambda);
    nn::save_snapshot(state.global_model, seed_dir / "model_final.flpv");

    last10s.push_back(sr.last10_mean);
    result.per_seed.push_back(std::move(sr));
  }

  result.last10_mean = mean_of(last10s);
  result.last10_std = std_of(last10s);

  write_text(out_dir / "config_effective.toml", format_config(config));
  write_text(out_dir / "summary.json", summary_json(result, config.seeds).dump(2) + "\n");
  return result;
}

namespace {

ExperimentConfig config_with_overrides(const std::string& config_path,
                                       const CliOverrides& overrides) {
  ExperimentConfig config = load_config(config_path);
  if (overrides.out_dir) config.out_dir = *overrides.out_dir;
  if (!overrides.seeds.empty()) config.seeds = overrides.seeds;
  config.validate();
  return config;
}

int guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int cmd_run(const std::string& config_path, const CliOverrides& overrides) {
  return guarded([&] {
    const ExperimentConfig config = config_with_overrides(config_path, overrides);
    const auto result = run_policy(config, config.weight_policy(), config.out_dir);
    std::cout << result.policy << ": last10_mean=" << fmt_double(result.last10_mean)
              << " last10_std=" << fmt_double(result.last10_std) << "\n";
  });
}

int cmd_sweep_gamma(const std::string& config_path, const CliOverrides& overrides) {
  return guarded([&] {
    const ExperimentConfig config = config_with_overrides(config_path, overrides);
    std::vector<double> gammas = overrides.gammas;
    if (gammas.empty()) gammas = {1.0, 0.99, 0.97, 0.95, 0.93, 0.9};
    for (double g : gammas)
      if (!(g > 0.0)) throw config_error("sweep gammas must be > 0");

    const fs::path out_dir = config.out_dir;
    fs::create_directories(out_dir);
    const fs::path schedule_dir = out_dir / "schedules";

    std::ostringstream table;
    table << "gamma,last10_mean,last10_std\n";
    for (double g : gammas) {
      fl::WeightPolicy policy;
      policy.kind = fl::PolicyKind::FixedGamma;
      policy.fixed_gamma = g;
      const auto result =
          run_policy(config, policy, out_dir / ("gamma_" + fmt_double(g)), schedule_dir);
      table << fmt_double(g) << ',' << fmt_double(result.last10_mean) << ','
            << fmt_double(result.last10_std) << '\n';
      std::cout << "gamma=" << fmt_double(g) << " last10_mean=" << fmt_double(result.last10_mean)
                << "\n";
    }
    write_text(out_dir / "sweep_summary.csv", table.str());
  });
}

int cmd_compare(const std::string& config_path, const CliOverrides& overrides) {
  return guarded([&] {
    const ExperimentConfig config = config_with_overrides(config_path, overrides);
    std::vector<std::string> policies = overrides.policies;
    if (policies.size() < 2) throw config_error("compare needs at least 2 policies");

    const fs::path out_dir = config.out_dir;
    fs::create_directories(out_dir);
    const fs::path schedule_dir = out_dir / "schedules";

    std::ostringstream table;
    table << "policy";
    for (auto seed : config.seeds) table << ",seed_" << seed;
    table << ",mean\n";

    for (std::size_t p = 0; p < policies.size(); ++p) {
      ExperimentConfig cfg = config;
      cfg.policy.name = policies[p];
      cfg.validate();
      // Duplicate policy names get distinct directories.
      std::string dir_name = policies[p];
      for (std::size_t q = 0; q < p; ++q)
        if (policies[q] == policies[p]) dir_name += "_dup" + std::to_string(q);
      const auto result =
          run_policy(cfg, cfg.weight_policy(), out_dir / dir_name, schedule_dir);
      table << policies[p];
      for (const auto& sr : result.per_seed) table << ',' << fmt_double(sr.last10_mean);
      table << ',' << fmt_double(result.last10_mean) << '\n';
      std::cout << policies[p] << ": last10_mean=" << fmt_double(result.last10_mean) << "\n";
    }
    write_text(out_dir / "comparison.csv", table.str());
  });
}

int cmd_partition_inspect(const std::string& config_path, const CliOverrides& overrides) {
  return guarded([&] {
    const ExperimentConfig config = config_with_overrides(config_path, overrides);
    fs::create_directories(config.out_dir);
    for (const auto seed : config.seeds) {
      const Scenario scenario = build_scenario(config, seed);
      std::ostringstream out;
      out << "client_id,size,heterogeneity_degree";
      for (int k = 0; k < scenario.train.num_classes; ++k) out << ",count_" << k;
      out << '\n';
      for (std::size_t c = 0; c < scenario.plan.client_indices.size(); ++c) {
        // The partition itself, before any label corruption.
        const auto client = data::subset(scenario.train, scenario.plan.client_indices[c]);
        const auto hist = data::class_histogram(client);
        out << c << ',' << client.size() << ','
            << fmt_double(coherence::heterogeneity_degree(hist));
        for (auto count : hist) out << ',' << count;
        out << '\n';
      }
      write_text(fs::path(config.out_dir) / ("partition_seed_" + std::to_string(seed) + ".csv"),
                 out.str());
    }
    std::cout << "partition tables written to " << config.out_dir << "\n";
  });
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

double parse_csv_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw io_error("bad number in rounds.csv: '" + s + "'");
  return v;
}

}  // namespace

int cmd_coherence_report(const std::string& run_dir) {
  return guarded([&] {
    const fs::path dir(run_dir);
    if (!fs::exists(dir / "summary.json"))
      throw io_error("no summary.json under " + run_dir + "; not a completed run directory");

    json summary;
    {
      std::ifstream in(dir / "summary.json");
      in >> summary;
    }
    json critical = json::array();

    std::vector<fs::path> seed_dirs;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_directory() && entry.path().filename().string().starts_with("seed_"))
        seed_dirs.push_back(entry.path());
    std::sort(seed_dirs.begin(), seed_dirs.end());
    if (seed_dirs.empty()) throw io_error("no seed_* directories under " + run_dir);

    for (const auto& seed_dir : seed_dirs) {
      const fs::path rounds_path = seed_dir / "rounds.csv";
      std::ifstream in(rounds_path);
      if (!in) throw io_error("missing run artifact: " + rounds_path.string());
      std::string line;
      if (!std::getline(in, line)) throw io_error("empty rounds.csv: " + rounds_path.string());
      const auto header = split_csv_line(line);
      auto col = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
          throw io_error("rounds.csv lacks column " + name + ": " + rounds_path.string());
        return static_cast<std::size_t>(it - header.begin());
      };
      const std::size_t c_round = col("round"), c_cohort = col("cohort_coherence"),
                        c_hetero = col("hetero_coherence"), c_opt = col("opt_norm"),
                        c_reg = col("reg_norm"), c_r = col("r");

      std::ostringstream out;
      out << "round,cohort_coherence,hetero_coherence,opt_norm,reg_norm,r\n";
      std::vector<double> cohort_series;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        out << fields[c_round] << ',' << fields[c_cohort] << ',' << fields[c_hetero] << ','
            << fields[c_opt] << ',' << fields[c_reg] << ',' << fields[c_r] << '\n';
        cohort_series.push_back(parse_csv_double(fields[c_cohort]));
      }
      write_text(seed_dir / "coherence.csv", out.str());

      std::optional<int> cp;
      if (cohort_series.size() >= 4) cp = coherence::detect_critical_point(cohort_series);
      const std::string seed_key = seed_dir.filename().string().substr(5);
      if (cp) {
        critical.push_back(*cp);
        if (summary.contains("per_seed") && summary["per_seed"].contains(seed_key))
          summary["per_seed"][seed_key]["critical_point"] = *cp;
      } else {
        critical.push_back(nullptr);
        if (summary.contains("per_seed") && summary["per_seed"].contains(seed_key))
          summary["per_seed"][seed_key]["critical_point"] = nullptr;
      }
      std::cout << seed_dir.filename().string() << ": critical_point="
                << (cp ? std::to_string(*cp) : std::string("none")) << "\n";
    }

    summary["critical_point"] = critical;
    write_text(dir / "summary.json", summary.dump(2) + "\n");
  });
}

}  // namespace fedlaw::exp

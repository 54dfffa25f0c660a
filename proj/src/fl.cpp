#include "fedlaw/fl.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <string>

#include "fedlaw/rng.hpp"

namespace fedlaw::fl {

CohortSchedule CohortSchedule::generate(std::uint64_t seed, int n_clients, int m,
                                        int n_rounds) {
  if (m < 1 || m > n_clients) throw shape_error("cohort size m must be in [1, n_clients]");
  if (n_rounds < 1) throw shape_error("schedule needs at least one round");
  CohortSchedule s{seed, n_clients, m, {}};
  s.rounds.reserve(static_cast<std::size_t>(n_rounds));
  Rng rng(derive_seed(seed, seed_tag::cohort));
  std::vector<int> ids(static_cast<std::size_t>(n_clients));
  for (int r = 0; r < n_rounds; ++r) {
    std::iota(ids.begin(), ids.end(), 0);
    // Partial Fisher-Yates: the first m entries are a uniform draw
    // without replacement.
    for (int i = 0; i < m; ++i) {
      const auto j = i + static_cast<int>(rng.next_below(
                             static_cast<std::uint64_t>(n_clients - i)));
      std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
    }
    std::vector<int> cohort(ids.begin(), ids.begin() + m);
    std::sort(cohort.begin(), cohort.end());
    s.rounds.push_back(std::move(cohort));
  }
  return s;
}

void CohortSchedule::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot open schedule file for writing: " + path.string());
  out << seed << ',' << n_clients << ',' << m << ',' << rounds.size() << '\n';
  for (const auto& round : rounds) {
    for (std::size_t i = 0; i < round.size(); ++i)
      out << (i ? "," : "") << round[i];
    out << '\n';
  }
  if (!out) throw io_error("schedule write failed: " + path.string());
}

CohortSchedule CohortSchedule::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open schedule file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw io_error("schedule file empty: " + path.string());

  auto split_ints = [&](const std::string& s) {
    std::vector<std::int64_t> out_vals;
    std::size_t start = 0;
    while (start <= s.size()) {
      const std::size_t comma = s.find(',', start);
      const std::string field = s.substr(start, comma - start);
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || p != field.data() + field.size())
        throw io_error("bad integer in schedule file: '" + field + "'");
      out_vals.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out_vals;
  };

  // Header: seed,n_clients,m,rounds. The seed is an unsigned 64-bit value.
  const auto first_comma = line.find(',');
  if (first_comma == std::string::npos)
    throw io_error("schedule header must be seed,n_clients,m,rounds");
  CohortSchedule s;
  {
    const std::string field = line.substr(0, first_comma);
    auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), s.seed);
    if (ec != std::errc() || p != field.data() + field.size())
      throw io_error("bad seed in schedule header: '" + field + "'");
  }
  const auto header = split_ints(line.substr(first_comma + 1));
  if (header.size() != 3) throw io_error("schedule header must be seed,n_clients,m,rounds");
  s.n_clients = static_cast<int>(header[0]);
  s.m = static_cast<int>(header[1]);
  const auto n_rounds = header[2];
  for (std::int64_t r = 0; r < n_rounds; ++r) {
    if (!std::getline(in, line))
      throw io_error("schedule file truncated at round " + std::to_string(r + 1));
    const auto ids = split_ints(line);
    if (static_cast<int>(ids.size()) != s.m)
      throw io_error("schedule round " + std::to_string(r + 1) + " has wrong cohort size");
    std::vector<int> round;
    round.reserve(ids.size());
    for (auto v : ids) {
      if (v < 0 || v >= s.n_clients) throw io_error("schedule client id out of range");
      round.push_back(static_cast<int>(v));
    }
    s.rounds.push_back(std::move(round));
  }
  return s;
}

const std::vector<int>& sample_cohort(const CohortSchedule& schedule, int round) {
  if (round < 1 || static_cast<std::size_t>(round) > schedule.rounds.size())
    throw std::out_of_range("round " + std::to_string(round) + " beyond schedule length");
  return schedule.rounds[static_cast<std::size_t>(round - 1)];
}

ClientUpdate local_train(const data::Dataset& client_data, const nn::ModelSpec& spec,
                         const nn::ParamVector<float>& global_model, double round_lr,
                         const TrainConfig& config, int client_id,
                         std::uint64_t client_seed) {
  if (client_data.size() == 0) throw std::domain_error("client has no training data");
  config.validate();
  if (!(round_lr >= 0.0)) throw std::domain_error("round_lr must be >= 0");

  nn::ParamVector<float> w = global_model;
  auto momentum = nn::MomentumState<float>::zeros(w);
  Rng rng(client_seed);

  const Eigen::Index n = client_data.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::int64_t steps = 0;

  for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (Eigen::Index start = 0; start < n; start += config.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(config.batch_size, n - start);
      nn::Batch<float> batch;
      batch.features.resize(len, client_data.dim());
      batch.labels.resize(static_cast<std::size_t>(len));
      for (Eigen::Index i = 0; i < len; ++i) {
        const Eigen::Index src = order[static_cast<std::size_t>(start + i)];
        batch.features.row(i) = client_data.features.row(src);
        batch.labels[static_cast<std::size_t>(i)] =
            client_data.labels[static_cast<std::size_t>(src)];
      }
      auto lg = nn::loss_grad(spec, w, batch);
      if (config.fedprox_mu > 0.0)
        lg.grad.data += static_cast<float>(config.fedprox_mu) * (w.data - global_model.data);
      if (round_lr > 0.0)
        w = nn::sgd_step(w, lg.grad, round_lr, config.momentum, config.weight_decay,
                         momentum);
      ++steps;
    }
  }

  ClientUpdate update;
  update.client_id = client_id;
  update.pseudo_gradient = {global_model.data - w.data, w.layout};
  update.local_model = std::move(w);
  update.data_size = n;
  update.histogram = data::class_histogram(client_data);
  update.steps_taken = steps;
  return update;
}

nn::ParamVector<float> aggregate(std::span<const ClientUpdate> updates,
                                 const AggWeights& weights,
                                 const nn::ParamVector<float>& global_model, double eta_g) {
  if (updates.empty()) throw shape_error("aggregate needs at least one update");
  if (weights.lambda.size() != static_cast<Eigen::Index>(updates.size()))
    throw shape_error("lambda length does not match update count");
  weights.validate();

  Eigen::VectorXd acc = weights.gamma * global_model.data.cast<double>();
  for (std::size_t i = 0; i < updates.size(); ++i) {
    nn::check_same_layout(updates[i].pseudo_gradient, global_model);
    const double mu_i = weights.gamma * weights.lambda[static_cast<Eigen::Index>(i)];
    acc -= (eta_g * mu_i) * updates[i].pseudo_gradient.data.cast<double>();
  }
  return {acc.cast<float>(), global_model.layout};
}

AggWeights datasize_weights(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw shape_error("datasize_weights needs at least one update");
  double total = 0.0;
  for (const auto& u : updates) total += static_cast<double>(u.data_size);
  AggWeights w;
  w.gamma = 1.0;
  w.lambda.resize(static_cast<Eigen::Index>(updates.size()));
  for (std::size_t i = 0; i < updates.size(); ++i)
    w.lambda[static_cast<Eigen::Index>(i)] = static_cast<double>(updates[i].data_size) / total;
  return w;
}

EvalResult evaluate(const nn::ModelSpec& spec, const nn::ParamVector<float>& params,
                    const data::Dataset& test_set) {
  if (test_set.size() == 0) throw std::domain_error("empty test set");
  const auto fwd = nn::forward(spec, params, test_set.as_batch());
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < fwd.logits.rows(); ++i) {
    // Ties break toward the lowest class index.
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < fwd.logits.cols(); ++c)
      if (fwd.logits(i, c) > fwd.logits(i, best)) best = c;
    if (best == test_set.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return {static_cast<double>(correct) / static_cast<double>(test_set.size()), fwd.loss};
}

nn::ParamVector<float> weighted_pseudo_gradient(std::span<const ClientUpdate> updates,
                                                const Eigen::VectorXd& lambda) {
  if (updates.empty()) throw shape_error("weighted_pseudo_gradient needs updates");
  if (lambda.size() != static_cast<Eigen::Index>(updates.size()))
    throw shape_error("lambda length does not match update count");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(updates.front().pseudo_gradient.data.size());
  for (std::size_t i = 0; i < updates.size(); ++i)
    acc += lambda[static_cast<Eigen::Index>(i)] *
           updates[i].pseudo_gradient.data.cast<double>();
  return {acc.cast<float>(), updates.front().pseudo_gradient.layout};
}

}  // namespace fedlaw::fl

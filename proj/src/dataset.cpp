#include "fedlaw/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedlaw/rng.hpp"

namespace fedlaw::data {

void Dataset::validate() const {
  if (num_classes < 1) throw shape_error("dataset needs num_classes >= 1");
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw shape_error("dataset feature rows do not match label count");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw shape_error("dataset label out of range");
  if (!features.allFinite()) throw shape_error("dataset features must be finite");
}

Dataset make_synthetic(int num_classes, int dim, int per_class, double spread,
                       std::uint64_t seed) {
  if (num_classes < 1 || dim < 1 || per_class < 1)
    throw shape_error("make_synthetic counts must be >= 1");
  if (!(spread > 0.0)) throw shape_error("make_synthetic spread must be > 0");

  Rng rng(seed);
  // Class centers with unit-scale (standard normal) coordinates.
  Eigen::MatrixXd centers(num_classes, dim);
  for (int k = 0; k < num_classes; ++k)
    for (int d = 0; d < dim; ++d) centers(k, d) = rng.normal();

  const Eigen::Index total = static_cast<Eigen::Index>(num_classes) * per_class;
  Eigen::MatrixXf features(total, dim);
  std::vector<int> labels(static_cast<std::size_t>(total));
  Eigen::Index row = 0;
  for (int k = 0; k < num_classes; ++k) {
    for (int s = 0; s < per_class; ++s, ++row) {
      for (int d = 0; d < dim; ++d)
        features(row, d) = static_cast<float>(centers(k, d) + spread * rng.normal());
      labels[static_cast<std::size_t>(row)] = k;
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  Dataset out;
  out.num_classes = num_classes;
  out.features.resize(total, dim);
  out.labels.resize(static_cast<std::size_t>(total));
  for (Eigen::Index i = 0; i < total; ++i) {
    out.features.row(i) = features.row(order[static_cast<std::size_t>(i)]);
    out.labels[static_cast<std::size_t>(i)] =
        labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
  }
  return out;
}

namespace {

std::vector<std::vector<Eigen::Index>> indices_by_class(const Dataset& dataset) {
  std::vector<std::vector<Eigen::Index>> by_class(
      static_cast<std::size_t>(dataset.num_classes));
  for (Eigen::Index i = 0; i < dataset.size(); ++i)
    by_class[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(i)])]
        .push_back(i);
  return by_class;
}

/// Splits each class's index list across n clients by Dirichlet(alpha)
/// proportions. No emptiness repair here.
std::vector<std::vector<Eigen::Index>> dirichlet_split(
    std::vector<std::vector<Eigen::Index>> by_class, double alpha, int n, Rng& rng) {
  std::vector<std::vector<Eigen::Index>> clients(static_cast<std::size_t>(n));
  for (auto& class_indices : by_class) {
    if (class_indices.empty()) continue;
    rng.shuffle(class_indices);
    const auto p = rng.dirichlet(alpha, static_cast<std::size_t>(n));
    const auto total = static_cast<double>(class_indices.size());
    double cum = 0.0;
    std::size_t start = 0;
    for (int c = 0; c < n; ++c) {
      cum += p[static_cast<std::size_t>(c)];
      const std::size_t end =
          (c + 1 == n) ? class_indices.size()
                       : std::min(class_indices.size(),
                                  static_cast<std::size_t>(std::llround(cum * total)));
      for (std::size_t i = start; i < end; ++i)
        clients[static_cast<std::size_t>(c)].push_back(class_indices[i]);
      start = std::max(start, end);
    }
  }
  return clients;
}

/// Moves one sample from the currently largest client into every empty one.
void repair_empty(std::vector<std::vector<Eigen::Index>>& clients) {
  for (auto& client : clients) {
    if (!client.empty()) continue;
    auto largest = std::max_element(
        clients.begin(), clients.end(),
        [](const auto& a, const auto& b) { return a.size() < b.size(); });
    if (largest->size() < 2) throw infeasible_error("cannot repair empty client");
    client.push_back(largest->back());
    largest->pop_back();
  }
}

void sort_client_indices(std::vector<std::vector<Eigen::Index>>& clients) {
  for (auto& c : clients) std::sort(c.begin(), c.end());
}

}  // namespace

PartitionPlan dirichlet_partition(const Dataset& dataset, double alpha, int n_clients,
                                  std::uint64_t seed) {
  dataset.validate();
  if (!(alpha > 0.0)) throw shape_error("dirichlet alpha must be > 0");
  if (n_clients < 1) throw shape_error("need at least one client");
  if (static_cast<Eigen::Index>(n_clients) > dataset.size())
    throw infeasible_error("more clients than samples");

  Rng rng(seed);
  auto clients = dirichlet_split(indices_by_class(dataset), alpha, n_clients, rng);
  repair_empty(clients);
  sort_client_indices(clients);
  return {std::move(clients), alpha, 0.0, false, seed};
}

PartitionPlan hybrid_partition(const Dataset& dataset, double alpha1, double alpha2,
                               int n_clients, std::uint64_t seed) {
  dataset.validate();
  if (!(alpha1 > 0.0) || !(alpha2 > 0.0)) throw shape_error("hybrid alphas must be > 0");
  if (n_clients < 2 || n_clients % 2 != 0)
    throw shape_error("hybrid partition needs an even client count >= 2");
  if (static_cast<Eigen::Index>(n_clients) > dataset.size())
    throw infeasible_error("more clients than samples");

  Rng rng(seed);
  const int half = n_clients / 2;

  // Full n-client draw with alpha1; only the first half keeps its share.
  auto first_draw = dirichlet_split(indices_by_class(dataset), alpha1, n_clients, rng);
  std::vector<std::vector<Eigen::Index>> clients(static_cast<std::size_t>(n_clients));
  std::vector<Eigen::Index> leftover;
  for (int c = 0; c < n_clients; ++c) {
    if (c < half)
      clients[static_cast<std::size_t>(c)] = std::move(first_draw[static_cast<std::size_t>(c)]);
    else
      leftover.insert(leftover.end(), first_draw[static_cast<std::size_t>(c)].begin(),
                      first_draw[static_cast<std::size_t>(c)].end());
  }

  // The leftover pool becomes the second half, drawn with alpha2.
  std::vector<std::vector<Eigen::Index>> pool_by_class(
      static_cast<std::size_t>(dataset.num_classes));
  for (Eigen::Index idx : leftover)
    pool_by_class[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(idx)])]
        .push_back(idx);
  auto second = dirichlet_split(std::move(pool_by_class), alpha2, half, rng);
  for (int c = 0; c < half; ++c)
    clients[static_cast<std::size_t>(half + c)] = std::move(second[static_cast<std::size_t>(c)]);

  repair_empty(clients);
  sort_client_indices(clients);
  return {std::move(clients), alpha1, alpha2, true, seed};
}

std::pair<Dataset, Dataset> build_proxy(const Dataset& source, int per_class, ProxyMode mode,
                                        double rho, std::uint64_t seed) {
  source.validate();
  if (per_class < 1) throw shape_error("build_proxy per_class must be >= 1");
  if (mode == ProxyMode::LongTailed && !(rho >= 1.0))
    throw shape_error("build_proxy rho must be >= 1");

  const int k = source.num_classes;
  std::vector<std::int64_t> want(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    if (mode == ProxyMode::Balanced) {
      want[static_cast<std::size_t>(c)] = per_class;
    } else {
      const double expo = (k > 1) ? -static_cast<double>(c) / (k - 1) : 0.0;
      want[static_cast<std::size_t>(c)] = std::llround(per_class * std::pow(rho, expo));
    }
  }

  Rng rng(seed);
  auto by_class = indices_by_class(source);
  std::vector<Eigen::Index> proxy_idx;
  std::vector<bool> taken(static_cast<std::size_t>(source.size()), false);
  for (int c = 0; c < k; ++c) {
    auto& pool = by_class[static_cast<std::size_t>(c)];
    const auto n = want[static_cast<std::size_t>(c)];
    if (static_cast<std::int64_t>(pool.size()) < n)
      throw infeasible_error("not enough samples of class " + std::to_string(c) +
                             " for the proxy set");
    rng.shuffle(pool);
    for (std::int64_t i = 0; i < n; ++i) {
      proxy_idx.push_back(pool[static_cast<std::size_t>(i)]);
      taken[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)])] = true;
    }
  }
  std::sort(proxy_idx.begin(), proxy_idx.end());

  std::vector<Eigen::Index> rest_idx;
  rest_idx.reserve(static_cast<std::size_t>(source.size()) - proxy_idx.size());
  for (Eigen::Index i = 0; i < source.size(); ++i)
    if (!taken[static_cast<std::size_t>(i)]) rest_idx.push_back(i);

  return {subset(source, proxy_idx), subset(source, rest_idx)};
}

Dataset corrupt_labels(const Dataset& dataset, int class_a, int class_b) {
  dataset.validate();
  if (class_a == class_b) throw std::domain_error("corrupt_labels classes must differ");
  if (class_a < 0 || class_b < 0 || class_a >= dataset.num_classes ||
      class_b >= dataset.num_classes)
    throw std::domain_error("corrupt_labels class index out of range");
  Dataset out = dataset;
  for (auto& y : out.labels) {
    if (y == class_a)
      y = class_b;
    else if (y == class_b)
      y = class_a;
  }
  return out;
}

ClassHistogram class_histogram(const Dataset& dataset) {
  ClassHistogram counts(static_cast<std::size_t>(dataset.num_classes), 0);
  for (int y : dataset.labels) counts[static_cast<std::size_t>(y)] += 1;
  return counts;
}

Dataset subset(const Dataset& dataset, std::span<const Eigen::Index> indices) {
  Dataset out;
  out.num_classes = dataset.num_classes;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), dataset.dim());
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = dataset.features.row(indices[i]);
    out.labels[i] = dataset.labels[static_cast<std::size_t>(indices[i])];
  }
  return out;
}

namespace {

std::string fmt_float(float v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

void save_csv(const Dataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot open dataset file for writing: " + path.string());
  out << dataset.num_classes << ',' << dataset.dim() << ',' << dataset.size() << '\n';
  for (Eigen::Index i = 0; i < dataset.size(); ++i) {
    out << dataset.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index d = 0; d < dataset.dim(); ++d)
      out << ',' << fmt_float(dataset.features(i, d));
    out << '\n';
  }
  if (!out) throw io_error("dataset write failed: " + path.string());
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open dataset file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw io_error("dataset file empty: " + path.string());

  auto parse_fields = [&](const std::string& s) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = s.find(',', start);
      fields.push_back(s.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return fields;
  };

  const auto header = parse_fields(line);
  if (header.size() != 3) throw io_error("dataset header must be num_classes,dim,count");
  auto to_i64 = [&](const std::string& s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw io_error("bad integer in dataset file: '" + s + "'");
    return v;
  };
  const std::int64_t num_classes = to_i64(header[0]);
  const std::int64_t dim = to_i64(header[1]);
  const std::int64_t count = to_i64(header[2]);
  if (num_classes < 1 || dim < 1 || count < 0)
    throw io_error("dataset header values out of range");

  Dataset out;
  out.num_classes = static_cast<int>(num_classes);
  out.features.resize(count, dim);
  out.labels.resize(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    if (!std::getline(in, line))
      throw io_error("dataset file truncated at row " + std::to_string(i));
    const auto fields = parse_fields(line);
    if (fields.size() != static_cast<std::size_t>(dim) + 1)
      throw io_error("dataset row " + std::to_string(i) + " has wrong field count");
    out.labels[static_cast<std::size_t>(i)] = static_cast<int>(to_i64(fields[0]));
    for (std::int64_t d = 0; d < dim; ++d) {
      const auto& f = fields[static_cast<std::size_t>(d) + 1];
      float v = 0.0f;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || p != f.data() + f.size())
        throw io_error("bad float in dataset row " + std::to_string(i));
      out.features(i, d) = v;
    }
  }
  out.validate();
  return out;
}

}  // namespace fedlaw::data

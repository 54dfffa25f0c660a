#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "fedlaw/dataset.hpp"
#include "fedlaw/rng.hpp"

using namespace fedlaw;

namespace {

/// Disjointness, covering, and nonemptiness of a partition plan.
void check_partition_integrity(const data::PartitionPlan& plan, Eigen::Index n_samples) {
  std::set<Eigen::Index> seen;
  for (const auto& client : plan.client_indices) {
    CHECK(!client.empty());
    for (const auto idx : client) {
      CHECK(idx >= 0);
      CHECK(idx < n_samples);
      CHECK(seen.insert(idx).second);  // disjoint
    }
  }
  CHECK(static_cast<Eigen::Index>(seen.size()) == n_samples);  // covering
}

/// Variance over classes of a client's class-proportion vector.
double proportion_variance(const data::Dataset& ds, const std::vector<Eigen::Index>& idx) {
  std::vector<double> counts(static_cast<std::size_t>(ds.num_classes), 0.0);
  for (auto i : idx) counts[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])] += 1.0;
  const double total = static_cast<double>(idx.size());
  double mean = 1.0 / ds.num_classes, var = 0.0;
  for (double c : counts) {
    const double d = c / total - mean;
    var += d * d;
  }
  return var / ds.num_classes;
}

}  // namespace

TEST_CASE("synthetic data has the requested shape and per-class counts") {
  const auto ds = data::make_synthetic(3, 2, 100, 0.3, 8);
  CHECK(ds.size() == 300);
  CHECK(ds.dim() == 2);
  const auto hist = data::class_histogram(ds);
  for (int k = 0; k < 3; ++k) CHECK(hist[static_cast<std::size_t>(k)] == 100);
}

TEST_CASE("synthetic data is deterministic per seed") {
  const auto a = data::make_synthetic(4, 3, 20, 0.5, 8);
  const auto b = data::make_synthetic(4, 3, 20, 0.5, 8);
  const auto c = data::make_synthetic(4, 3, 20, 0.5, 9);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  CHECK(a.features != c.features);
}

TEST_CASE("tiny spread makes blobs nearest-centroid separable") {
  const auto ds = data::make_synthetic(5, 4, 50, 1e-6, 8);
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(5, 4);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(5);
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    centroids.row(ds.labels[static_cast<std::size_t>(i)]) += ds.features.row(i).cast<double>();
    counts[ds.labels[static_cast<std::size_t>(i)]] += 1.0;
  }
  for (int k = 0; k < 5; ++k) centroids.row(k) /= counts[k];
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int k = 0; k < 5; ++k) {
      const double d = (ds.features.row(i).cast<double>() - centroids.row(k)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best == ds.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  CHECK(correct == ds.size());
}

TEST_CASE("near-IID dirichlet gives near-uniform client class proportions") {
  const auto ds = data::make_synthetic(10, 2, 100, 0.5, 8);
  const auto plan = data::dirichlet_partition(ds, 1000.0, 10, 8);
  check_partition_integrity(plan, ds.size());
  for (const auto& client : plan.client_indices) {
    std::vector<double> counts(10, 0.0);
    for (auto i : client) counts[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])] += 1.0;
    for (double c : counts) CHECK(std::abs(c / client.size() - 0.1) <= 0.05);
  }
}

TEST_CASE("strongly non-IID dirichlet concentrates client classes") {
  const auto ds = data::make_synthetic(10, 2, 100, 0.5, 8);
  const auto plan = data::dirichlet_partition(ds, 0.1, 10, 8);
  check_partition_integrity(plan, ds.size());
  bool any_concentrated = false;
  for (const auto& client : plan.client_indices) {
    std::vector<double> counts(10, 0.0);
    for (auto i : client) counts[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])] += 1.0;
    const double top = *std::max_element(counts.begin(), counts.end());
    if (top > 0.5 * static_cast<double>(client.size())) any_concentrated = true;
  }
  CHECK(any_concentrated);
}

TEST_CASE("single client owns everything") {
  const auto ds = data::make_synthetic(3, 2, 10, 0.5, 8);
  const auto plan = data::dirichlet_partition(ds, 1.0, 1, 8);
  CHECK(plan.client_indices.size() == 1);
  CHECK(static_cast<Eigen::Index>(plan.client_indices[0].size()) == ds.size());
}

TEST_CASE("partition integrity holds across alphas and seeds") {
  const auto ds = data::make_synthetic(5, 2, 40, 0.5, 8);
  for (const double alpha : {0.1, 1.0, 10.0})
    for (std::uint64_t seed = 0; seed < 5; ++seed)
      check_partition_integrity(data::dirichlet_partition(ds, alpha, 7, seed), ds.size());
}

TEST_CASE("more clients than samples is infeasible") {
  const auto ds = data::make_synthetic(2, 2, 3, 0.5, 8);
  CHECK_THROWS_AS(data::dirichlet_partition(ds, 1.0, 7, 8), infeasible_error);
}

TEST_CASE("heterogeneity grows as alpha shrinks (20 seed average)") {
  const auto ds = data::make_synthetic(10, 2, 50, 0.5, 8);
  double var_low = 0.0, var_high = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p_low = data::dirichlet_partition(ds, 0.1, 10, seed);
    const auto p_high = data::dirichlet_partition(ds, 100.0, 10, seed);
    for (int c = 0; c < 10; ++c) {
      var_low += proportion_variance(ds, p_low.client_indices[static_cast<std::size_t>(c)]);
      var_high += proportion_variance(ds, p_high.client_indices[static_cast<std::size_t>(c)]);
    }
  }
  CHECK(var_low / 200.0 > var_high / 200.0);
}

TEST_CASE("hybrid partition: balanced first half, imbalanced second half") {
  const auto ds = data::make_synthetic(10, 2, 200, 0.5, 8);
  const auto plan = data::hybrid_partition(ds, 10.0, 0.1, 20, 8);
  check_partition_integrity(plan, ds.size());
  CHECK(plan.hybrid);
  double first = 0.0, second = 0.0;
  for (int c = 0; c < 10; ++c) {
    first += proportion_variance(ds, plan.client_indices[static_cast<std::size_t>(c)]);
    second += proportion_variance(ds, plan.client_indices[static_cast<std::size_t>(c + 10)]);
  }
  CHECK(first / 10.0 < second / 10.0);
}

TEST_CASE("hybrid halves are statistically alike when alphas agree") {
  const auto ds = data::make_synthetic(10, 2, 200, 0.5, 8);
  const auto plan = data::hybrid_partition(ds, 1000.0, 1000.0, 20, 8);
  double first = 0.0, second = 0.0;
  for (int c = 0; c < 10; ++c) {
    first += proportion_variance(ds, plan.client_indices[static_cast<std::size_t>(c)]);
    second += proportion_variance(ds, plan.client_indices[static_cast<std::size_t>(c + 10)]);
  }
  const double ratio = first / second;
  CHECK(ratio < 2.0);
  CHECK(ratio > 0.5);
}

TEST_CASE("two-client hybrid is disjoint and covering") {
  const auto ds = data::make_synthetic(3, 2, 20, 0.5, 8);
  const auto plan = data::hybrid_partition(ds, 1.0, 1.0, 2, 8);
  check_partition_integrity(plan, ds.size());
}

TEST_CASE("hybrid partition rejects odd client counts") {
  const auto ds = data::make_synthetic(3, 2, 20, 0.5, 8);
  CHECK_THROWS_AS(data::hybrid_partition(ds, 1.0, 1.0, 5, 8), shape_error);
}

TEST_CASE("balanced proxy takes exactly per_class of each class") {
  const auto ds = data::make_synthetic(10, 2, 30, 0.5, 8);
  const auto [proxy, rest] = data::build_proxy(ds, 10, data::ProxyMode::Balanced, 1.0, 8);
  CHECK(proxy.size() == 100);
  const auto hist = data::class_histogram(proxy);
  for (auto c : hist) CHECK(c == 10);
  CHECK(proxy.size() + rest.size() == ds.size());
}

TEST_CASE("long-tailed proxy follows the exponential profile") {
  const auto ds = data::make_synthetic(10, 2, 120, 0.5, 8);
  const auto [proxy, rest] = data::build_proxy(ds, 100, data::ProxyMode::LongTailed, 10.0, 8);
  const auto hist = data::class_histogram(proxy);
  CHECK(hist[0] == 100);  // head class
  CHECK(hist[9] == 10);   // tail class = per_class / rho
  for (std::size_t k = 1; k < 10; ++k) CHECK(hist[k] <= hist[k - 1]);
}

TEST_CASE("proxy and remainder are disjoint and their union is the source") {
  const auto ds = data::make_synthetic(4, 3, 25, 0.5, 8);
  const auto [proxy, rest] = data::build_proxy(ds, 5, data::ProxyMode::Balanced, 1.0, 8);
  // Union as multisets of (label, feature-row) must equal the source.
  auto key = [](const data::Dataset& d, Eigen::Index i) {
    std::string k = std::to_string(d.labels[static_cast<std::size_t>(i)]);
    for (Eigen::Index c = 0; c < d.dim(); ++c) k += "," + std::to_string(d.features(i, c));
    return k;
  };
  std::multiset<std::string> source_keys, split_keys;
  for (Eigen::Index i = 0; i < ds.size(); ++i) source_keys.insert(key(ds, i));
  for (Eigen::Index i = 0; i < proxy.size(); ++i) split_keys.insert(key(proxy, i));
  for (Eigen::Index i = 0; i < rest.size(); ++i) split_keys.insert(key(rest, i));
  CHECK(source_keys == split_keys);
}

TEST_CASE("proxy construction fails on insufficient class samples") {
  const auto ds = data::make_synthetic(3, 2, 4, 0.5, 8);
  CHECK_THROWS_AS(data::build_proxy(ds, 5, data::ProxyMode::Balanced, 1.0, 8),
                  infeasible_error);
}

TEST_CASE("label swap is an involution") {
  const auto ds = data::make_synthetic(5, 2, 20, 0.5, 8);
  const auto swapped = data::corrupt_labels(ds, 1, 3);
  const auto back = data::corrupt_labels(swapped, 1, 3);
  CHECK(back.labels == ds.labels);
  CHECK(back.features == ds.features);
}

TEST_CASE("label swap without the classes present is a no-op") {
  data::Dataset ds;
  ds.num_classes = 5;
  ds.features = Eigen::MatrixXf::Random(6, 2);
  ds.labels = {0, 0, 2, 2, 2, 0};
  const auto swapped = data::corrupt_labels(ds, 1, 3);
  CHECK(swapped.labels == ds.labels);
}

TEST_CASE("label swap exchanges the histogram entries") {
  const auto ds = data::make_synthetic(5, 2, 20, 0.5, 8);
  auto before = data::class_histogram(ds);
  const auto after = data::class_histogram(data::corrupt_labels(ds, 0, 4));
  std::swap(before[0], before[4]);
  CHECK(after == before);
}

TEST_CASE("label swap validates class indices") {
  const auto ds = data::make_synthetic(3, 2, 5, 0.5, 8);
  CHECK_THROWS_AS(data::corrupt_labels(ds, 1, 1), std::domain_error);
  CHECK_THROWS_AS(data::corrupt_labels(ds, 0, 3), std::domain_error);
}

TEST_CASE("class_histogram matches a brute-force tally and sums to size") {
  const auto ds = data::make_synthetic(7, 2, 13, 0.5, 8);
  const auto hist = data::class_histogram(ds);
  std::int64_t sum = 0;
  for (int k = 0; k < 7; ++k) {
    std::int64_t tally = 0;
    for (int y : ds.labels)
      if (y == k) ++tally;
    CHECK(hist[static_cast<std::size_t>(k)] == tally);
    sum += tally;
  }
  CHECK(sum == ds.size());
}

TEST_CASE("empty dataset histogram is all zeros") {
  data::Dataset ds;
  ds.num_classes = 4;
  ds.features.resize(0, 3);
  const auto hist = data::class_histogram(ds);
  CHECK(hist.size() == 4);
  for (auto c : hist) CHECK(c == 0);
}

TEST_CASE("dataset csv round-trips bit-exactly") {
  const auto ds = data::make_synthetic(4, 5, 12, 0.7, 8);
  const auto path = std::filesystem::temp_directory_path() / "fedlaw_test_dataset.csv";
  data::save_csv(ds, path);
  const auto loaded = data::load_csv(path);
  CHECK(loaded.num_classes == ds.num_classes);
  CHECK(loaded.labels == ds.labels);
  CHECK(loaded.features == ds.features);
  std::filesystem::remove(path);
}

TEST_CASE("dataset loader rejects invalid files") {
  const auto path = std::filesystem::temp_directory_path() / "fedlaw_test_bad_ds.csv";
  {
    std::ofstream out(path);
    out << "2,2,1\n5,0.0,0.0\n";  // label 5 out of range for 2 classes
  }
  CHECK_THROWS(data::load_csv(path));
  {
    std::ofstream out(path);
    out << "2,2,3\n0,0.0,0.0\n";  // truncated
  }
  CHECK_THROWS_AS(data::load_csv(path), io_error);
  std::filesystem::remove(path);
}

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fedlaw/experiment.hpp"

namespace fedlaw::exp {

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

namespace {

/// Minimal key/section config reader: [section] headers, key = value lines,
/// values are strings, numbers, booleans, or flat lists. Unknown keys are
/// reported by name after parsing.
class ConfigReader {
 public:
  explicit ConfigReader(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      strip_comment(line);
      trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw config_error("config line " + std::to_string(line_no) +
                             ": unterminated section header");
        section = line.substr(1, line.size() - 2);
        trim(section);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw config_error("config line " + std::to_string(line_no) +
                           ": expected key = value");
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 1);
      trim(key);
      trim(value);
      if (key.empty())
        throw config_error("config line " + std::to_string(line_no) + ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (values_.count(full))
        throw config_error("duplicate config key: " + full);
      values_[full] = value;
    }
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& dflt) {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    std::string v = it->second;
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"')
      v = v.substr(1, v.size() - 2);
    return v;
  }

  bool get_bool(const std::string& key, bool dflt) {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw config_error("config field " + key + " must be true or false");
  }

  std::int64_t get_int(const std::string& key, std::int64_t dflt) {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    return parse_int(key, it->second);
  }

  double get_double(const std::string& key, double dflt) {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    return parse_double(key, it->second);
  }

  std::vector<std::int64_t> get_int_list(const std::string& key,
                                         std::vector<std::int64_t> dflt) {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(key);
    std::vector<std::int64_t> out;
    for (const auto& item : parse_list(key, it->second)) out.push_back(parse_int(key, item));
    return out;
  }

  void check_all_consumed() const {
    for (const auto& [key, value] : values_)
      if (!consumed_.count(key)) throw config_error("unknown config field: " + key);
  }

 private:
  static void strip_comment(std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_string = !in_string;
      if (line[i] == '#' && !in_string) {
        line.erase(i);
        return;
      }
    }
  }

  static void trim(std::string& s) {
    const auto notspace = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
    s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
  }

  static std::int64_t parse_int(const std::string& key, const std::string& s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw config_error("config field " + key + " must be an integer, got '" + s + "'");
    return v;
  }

  static double parse_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw config_error("config field " + key + " must be a number, got '" + s + "'");
    return v;
  }

  static std::vector<std::string> parse_list(const std::string& key, const std::string& s) {
    if (s.size() < 2 || s.front() != '[' || s.back() != ']')
      throw config_error("config field " + key + " must be a [list]");
    std::vector<std::string> items;
    std::string body = s.substr(1, s.size() - 2);
    std::size_t start = 0;
    while (start <= body.size()) {
      const auto comma = body.find(',', start);
      std::string item = body.substr(start, comma - start);
      trim(item);
      if (!item.empty()) items.push_back(item);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return items;
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

law::BaseFn parse_base_fn(const std::string& name) {
  if (name == "exponential") return law::BaseFn::Exponential;
  if (name == "quadratic") return law::BaseFn::Quadratic;
  throw config_error("server_opt.base_fn must be exponential or quadratic, got '" + name +
                     "'");
}

std::string base_fn_name(law::BaseFn fn) {
  return fn == law::BaseFn::Exponential ? "exponential" : "quadratic";
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ConfigReader r(text);
  ExperimentConfig c;

  c.dataset.kind = r.get_string("dataset.kind", c.dataset.kind);
  c.dataset.num_classes = static_cast<int>(r.get_int("dataset.num_classes", c.dataset.num_classes));
  c.dataset.dim = static_cast<int>(r.get_int("dataset.dim", c.dataset.dim));
  c.dataset.train_per_class =
      static_cast<int>(r.get_int("dataset.train_per_class", c.dataset.train_per_class));
  c.dataset.test_per_class =
      static_cast<int>(r.get_int("dataset.test_per_class", c.dataset.test_per_class));
  c.dataset.spread = r.get_double("dataset.spread", c.dataset.spread);
  c.dataset.seed = static_cast<std::uint64_t>(r.get_int("dataset.seed", static_cast<std::int64_t>(c.dataset.seed)));
  c.dataset.train_csv = r.get_string("dataset.train_csv", c.dataset.train_csv);
  c.dataset.test_csv = r.get_string("dataset.test_csv", c.dataset.test_csv);

  c.partition.kind = r.get_string("partition.kind", c.partition.kind);
  c.partition.alpha = r.get_double("partition.alpha", c.partition.alpha);
  c.partition.alpha1 = r.get_double("partition.alpha1", c.partition.alpha1);
  c.partition.alpha2 = r.get_double("partition.alpha2", c.partition.alpha2);
  c.partition.n_clients = static_cast<int>(r.get_int("partition.n_clients", c.partition.n_clients));

  c.cohort.m = static_cast<int>(r.get_int("cohort.m", c.cohort.m));
  c.cohort.rounds = static_cast<int>(r.get_int("cohort.rounds", c.cohort.rounds));

  {
    std::vector<std::int64_t> dflt(c.model.hidden.begin(), c.model.hidden.end());
    c.model.hidden.clear();
    for (auto v : r.get_int_list("model.hidden", dflt))
      c.model.hidden.push_back(static_cast<int>(v));
  }

  c.train.local_epochs = static_cast<int>(r.get_int("train.local_epochs", c.train.local_epochs));
  c.train.batch_size = static_cast<int>(r.get_int("train.batch_size", c.train.batch_size));
  c.train.lr0 = r.get_double("train.lr0", c.train.lr0);
  c.train.lr_decay = r.get_double("train.lr_decay", c.train.lr_decay);
  c.train.momentum = r.get_double("train.momentum", c.train.momentum);
  c.train.weight_decay = r.get_double("train.weight_decay", c.train.weight_decay);
  c.train.global_lr = r.get_double("train.global_lr", c.train.global_lr);
  c.train.fedprox_mu = r.get_double("train.fedprox_mu", c.train.fedprox_mu);

  c.policy.name = r.get_string("policy.name", c.policy.name);
  c.policy.gamma = r.get_double("policy.gamma", c.policy.gamma);
  c.policy.stop_round = static_cast<int>(r.get_int("policy.stop_round", c.policy.stop_round));
  c.policy.freeze = r.get_bool("policy.freeze", c.policy.freeze);

  c.server_opt.epochs = static_cast<int>(r.get_int("server_opt.epochs", c.server_opt.epochs));
  c.server_opt.lr_gamma = r.get_double("server_opt.lr_gamma", c.server_opt.lr_gamma);
  c.server_opt.lr_lambda = r.get_double("server_opt.lr_lambda", c.server_opt.lr_lambda);
  c.server_opt.beta1 = r.get_double("server_opt.beta1", c.server_opt.beta1);
  c.server_opt.beta2 = r.get_double("server_opt.beta2", c.server_opt.beta2);
  c.server_opt.adam_eps = r.get_double("server_opt.adam_eps", c.server_opt.adam_eps);
  c.server_opt.proxy_batch_size =
      static_cast<int>(r.get_int("server_opt.proxy_batch_size", c.server_opt.proxy_batch_size));
  c.server_opt.swa_cycle_len =
      static_cast<int>(r.get_int("server_opt.swa_cycle_len", c.server_opt.swa_cycle_len));
  c.server_opt.swa_lr_high = r.get_double("server_opt.swa_lr_high", c.server_opt.swa_lr_high);
  c.server_opt.swa_lr_low = r.get_double("server_opt.swa_lr_low", c.server_opt.swa_lr_low);
  c.server_opt.base_fn =
      parse_base_fn(r.get_string("server_opt.base_fn", base_fn_name(c.server_opt.base_fn)));
  c.server_opt.server_ft_epochs =
      static_cast<int>(r.get_int("server_opt.server_ft_epochs", c.server_opt.server_ft_epochs));
  c.server_opt.server_ft_lr = r.get_double("server_opt.server_ft_lr", c.server_opt.server_ft_lr);

  c.proxy.per_class = static_cast<int>(r.get_int("proxy.per_class", c.proxy.per_class));
  c.proxy.mode = r.get_string("proxy.mode", c.proxy.mode);
  c.proxy.rho = r.get_double("proxy.rho", c.proxy.rho);

  c.corruption.fraction = r.get_double("corruption.fraction", c.corruption.fraction);
  c.corruption.class_a = static_cast<int>(r.get_int("corruption.class_a", c.corruption.class_a));
  c.corruption.class_b = static_cast<int>(r.get_int("corruption.class_b", c.corruption.class_b));

  {
    std::vector<std::int64_t> dflt(c.seeds.begin(), c.seeds.end());
    c.seeds.clear();
    for (auto v : r.get_int_list("seeds", dflt))
      c.seeds.push_back(static_cast<std::uint64_t>(v));
  }
  c.out_dir = r.get_string("output.dir", c.out_dir);

  r.check_all_consumed();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

std::string format_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "seeds = [";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) out << (i ? ", " : "") << c.seeds[i];
  out << "]\n";
  out << "\n[dataset]\n";
  out << "kind = \"" << c.dataset.kind << "\"\n";
  out << "num_classes = " << c.dataset.num_classes << "\n";
  out << "dim = " << c.dataset.dim << "\n";
  out << "train_per_class = " << c.dataset.train_per_class << "\n";
  out << "test_per_class = " << c.dataset.test_per_class << "\n";
  out << "spread = " << fmt_double(c.dataset.spread) << "\n";
  out << "seed = " << c.dataset.seed << "\n";
  if (!c.dataset.train_csv.empty()) out << "train_csv = \"" << c.dataset.train_csv << "\"\n";
  if (!c.dataset.test_csv.empty()) out << "test_csv = \"" << c.dataset.test_csv << "\"\n";
  out << "\n[partition]\n";
  out << "kind = \"" << c.partition.kind << "\"\n";
  out << "alpha = " << fmt_double(c.partition.alpha) << "\n";
  out << "alpha1 = " << fmt_double(c.partition.alpha1) << "\n";
  out << "alpha2 = " << fmt_double(c.partition.alpha2) << "\n";
  out << "n_clients = " << c.partition.n_clients << "\n";
  out << "\n[cohort]\n";
  out << "m = " << c.cohort.m << "\n";
  out << "rounds = " << c.cohort.rounds << "\n";
  out << "\n[model]\n";
  out << "hidden = [";
  for (std::size_t i = 0; i < c.model.hidden.size(); ++i)
    out << (i ? ", " : "") << c.model.hidden[i];
  out << "]\n";
  out << "\n[train]\n";
  out << "local_epochs = " << c.train.local_epochs << "\n";
  out << "batch_size = " << c.train.batch_size << "\n";
  out << "lr0 = " << fmt_double(c.train.lr0) << "\n";
  out << "lr_decay = " << fmt_double(c.train.lr_decay) << "\n";
  out << "momentum = " << fmt_double(c.train.momentum) << "\n";
  out << "weight_decay = " << fmt_double(c.train.weight_decay) << "\n";
  out << "global_lr = " << fmt_double(c.train.global_lr) << "\n";
  out << "fedprox_mu = " << fmt_double(c.train.fedprox_mu) << "\n";
  out << "\n[policy]\n";
  out << "name = \"" << c.policy.name << "\"\n";
  out << "gamma = " << fmt_double(c.policy.gamma) << "\n";
  out << "stop_round = " << c.policy.stop_round << "\n";
  out << "freeze = " << (c.policy.freeze ? "true" : "false") << "\n";
  out << "\n[server_opt]\n";
  out << "epochs = " << c.server_opt.epochs << "\n";
  out << "lr_gamma = " << fmt_double(c.server_opt.lr_gamma) << "\n";
  out << "lr_lambda = " << fmt_double(c.server_opt.lr_lambda) << "\n";
  out << "beta1 = " << fmt_double(c.server_opt.beta1) << "\n";
  out << "beta2 = " << fmt_double(c.server_opt.beta2) << "\n";
  out << "adam_eps = " << fmt_double(c.server_opt.adam_eps) << "\n";
  out << "proxy_batch_size = " << c.server_opt.proxy_batch_size << "\n";
  out << "swa_cycle_len = " << c.server_opt.swa_cycle_len << "\n";
  out << "swa_lr_high = " << fmt_double(c.server_opt.swa_lr_high) << "\n";
  out << "swa_lr_low = " << fmt_double(c.server_opt.swa_lr_low) << "\n";
  out << "base_fn = \"" << base_fn_name(c.server_opt.base_fn) << "\"\n";
  out << "server_ft_epochs = " << c.server_opt.server_ft_epochs << "\n";
  out << "server_ft_lr = " << fmt_double(c.server_opt.server_ft_lr) << "\n";
  out << "\n[proxy]\n";
  out << "per_class = " << c.proxy.per_class << "\n";
  out << "mode = \"" << c.proxy.mode << "\"\n";
  out << "rho = " << fmt_double(c.proxy.rho) << "\n";
  out << "\n[corruption]\n";
  out << "fraction = " << fmt_double(c.corruption.fraction) << "\n";
  out << "class_a = " << c.corruption.class_a << "\n";
  out << "class_b = " << c.corruption.class_b << "\n";
  out << "\n[output]\n";
  out << "dir = \"" << c.out_dir << "\"\n";
  return out.str();
}

void ExperimentConfig::validate() const {
  if (dataset.kind != "synthetic" && dataset.kind != "csv")
    throw config_error("dataset.kind must be synthetic or csv");
  if (dataset.kind == "synthetic") {
    if (dataset.num_classes < 2) throw config_error("dataset.num_classes must be >= 2");
    if (dataset.dim < 1) throw config_error("dataset.dim must be >= 1");
    if (dataset.train_per_class < 1) throw config_error("dataset.train_per_class must be >= 1");
    if (dataset.test_per_class < 1) throw config_error("dataset.test_per_class must be >= 1");
    if (!(dataset.spread > 0.0)) throw config_error("dataset.spread must be > 0");
  } else {
    if (dataset.train_csv.empty() || dataset.test_csv.empty())
      throw config_error("dataset.train_csv and dataset.test_csv are required for csv datasets");
  }
  if (partition.kind != "dirichlet" && partition.kind != "hybrid")
    throw config_error("partition.kind must be dirichlet or hybrid");
  if (partition.kind == "dirichlet" && !(partition.alpha > 0.0))
    throw config_error("partition.alpha must be > 0");
  if (partition.kind == "hybrid") {
    if (!(partition.alpha1 > 0.0) || !(partition.alpha2 > 0.0))
      throw config_error("partition.alpha1/alpha2 must be > 0");
    if (partition.n_clients % 2 != 0)
      throw config_error("partition.n_clients must be even for hybrid partitions");
  }
  if (partition.n_clients < 1) throw config_error("partition.n_clients must be >= 1");
  if (cohort.m < 1 || cohort.m > partition.n_clients)
    throw config_error("cohort.m must be in [1, partition.n_clients]");
  if (cohort.rounds < 1) throw config_error("cohort.rounds must be >= 1");
  for (int h : model.hidden)
    if (h < 1) throw config_error("model.hidden entries must be >= 1");
  train.validate();
  server_opt.validate();
  fl::parse_policy_kind(policy.name);  // throws on unknown names
  if (policy.name == "fixed_gamma" && !(policy.gamma > 0.0))
    throw config_error("policy.gamma must be > 0");
  if (policy.stop_round < 0) throw config_error("policy.stop_round must be >= 0");
  if (proxy.per_class < 1) throw config_error("proxy.per_class must be >= 1");
  if (proxy.mode != "balanced" && proxy.mode != "long_tailed")
    throw config_error("proxy.mode must be balanced or long_tailed");
  if (proxy.mode == "long_tailed" && !(proxy.rho >= 1.0))
    throw config_error("proxy.rho must be >= 1");
  if (corruption.fraction < 0.0 || corruption.fraction > 1.0)
    throw config_error("corruption.fraction must be in [0, 1]");
  if (corruption.fraction > 0.0 && corruption.class_a == corruption.class_b)
    throw config_error("corruption classes must differ");
  if (seeds.empty()) throw config_error("seeds must be nonempty");
  if (out_dir.empty()) throw config_error("output.dir must be nonempty");
}

fl::WeightPolicy ExperimentConfig::weight_policy() const {
  fl::WeightPolicy p;
  p.kind = fl::parse_policy_kind(policy.name);
  p.fixed_gamma = policy.gamma;
  p.stop_round = policy.stop_round;
  p.freeze = policy.freeze || policy.name == "fedlaw_frozen";
  return p;
}

nn::ModelSpec ExperimentConfig::model_spec(int input_dim, int num_classes) const {
  std::vector<int> sizes;
  sizes.push_back(input_dim);
  for (int h : model.hidden) sizes.push_back(h);
  sizes.push_back(num_classes);
  return nn::ModelSpec(sizes);
}

}  // namespace fedlaw::exp

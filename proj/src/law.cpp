#include "fedlaw/law.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedlaw/rng.hpp"

namespace fedlaw::law {

Eigen::VectorXd to_lambda(const LambdaParam& param) {
  if (param.x.size() < 1) throw shape_error("lambda parameter must be nonempty");
  const Eigen::Index m = param.x.size();
  Eigen::VectorXd lambda(m);
  if (param.base_fn == BaseFn::Exponential) {
    const double xmax = param.x.maxCoeff();
    lambda = (param.x.array() - xmax).exp();
  } else {
    lambda = param.x.array().square();
    if (!(lambda.sum() > 0.0))
      throw std::domain_error("quadratic base function is degenerate at x = 0");
  }
  lambda /= lambda.sum();
  return lambda;
}

Eigen::VectorXd apply_base_jacobian(const LambdaParam& param, const Eigen::VectorXd& lambda,
                                    const Eigen::VectorXd& d_lambda) {
  if (lambda.size() != param.x.size() || d_lambda.size() != param.x.size())
    throw shape_error("base jacobian operand sizes mismatch");
  const double weighted = lambda.dot(d_lambda);
  if (param.base_fn == BaseFn::Exponential)
    return lambda.array() * (d_lambda.array() - weighted);
  const double sum_sq = param.x.squaredNorm();
  return (2.0 * param.x.array() / sum_sq) * (d_lambda.array() - weighted);
}

Eigen::VectorXd adam_step(const Eigen::VectorXd& params, const Eigen::VectorXd& grads,
                          AdamState& state, double lr, double beta1, double beta2,
                          double eps) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw shape_error("adam operand sizes mismatch");
  if (!(lr > 0.0)) throw std::domain_error("adam lr must be > 0");
  state.step += 1;
  state.m = beta1 * state.m + (1.0 - beta1) * grads;
  state.v = beta2 * state.v + (1.0 - beta2) * grads.array().square().matrix();
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  const Eigen::ArrayXd m_hat = state.m.array() / bc1;
  const Eigen::ArrayXd v_hat = state.v.array() / bc2;
  return params.array() - lr * m_hat / (v_hat.sqrt() + eps);
}

namespace {

struct Problem {
  const nn::ModelSpec& spec;
  std::vector<const nn::ParamVector<float>*> models;
  Eigen::VectorXd lambda_ds;
  nn::Batch<float> proxy_full;
  const data::Dataset& proxy;
};

Problem make_problem(const nn::ModelSpec& spec, std::span<const fl::ClientUpdate> updates,
                     const data::Dataset& proxy) {
  if (updates.empty()) throw shape_error("weight learning needs at least one update");
  if (proxy.size() == 0) throw std::domain_error("weight learning needs a nonempty proxy");
  Problem p{spec, {}, {}, proxy.as_batch(), proxy};
  p.models.reserve(updates.size());
  double total = 0.0;
  for (const auto& u : updates) {
    p.models.push_back(&u.local_model);
    total += static_cast<double>(u.data_size);
  }
  p.lambda_ds.resize(static_cast<Eigen::Index>(updates.size()));
  for (std::size_t i = 0; i < updates.size(); ++i)
    p.lambda_ds[static_cast<Eigen::Index>(i)] =
        static_cast<double>(updates[i].data_size) / total;
  return p;
}

double full_proxy_loss(const Problem& p, double gamma, const Eigen::VectorXd& lambda) {
  const auto w = combine_models(p.models, gamma, lambda);
  return nn::forward(p.spec, w, p.proxy_full).loss;
}

Eigen::VectorXd init_x(const Problem& p, std::span<const fl::ClientUpdate> updates,
                       BaseFn base) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(updates.size()));
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const double s = static_cast<double>(updates[i].data_size);
    x[static_cast<Eigen::Index>(i)] = (base == BaseFn::Exponential) ? std::log(s) : std::sqrt(s);
  }
  return x;
}

struct Best {
  double gamma;
  Eigen::VectorXd lambda;
  double loss;

  void offer(double g, const Eigen::VectorXd& l, double candidate_loss) {
    if (candidate_loss < loss) {
      gamma = g;
      lambda = l;
      loss = candidate_loss;
    }
  }
};

/// Mini-batches of the proxy set for one server epoch; full batch when
/// batch_size is 0 or covers the whole proxy.
std::vector<nn::Batch<float>> proxy_batches(const Problem& p, int batch_size, Rng& rng) {
  const Eigen::Index n = p.proxy.size();
  if (batch_size <= 0 || batch_size >= n) return {p.proxy_full};
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<nn::Batch<float>> batches;
  for (Eigen::Index start = 0; start < n; start += batch_size) {
    const Eigen::Index len = std::min<Eigen::Index>(batch_size, n - start);
    nn::Batch<float> b;
    b.features.resize(len, p.proxy.dim());
    b.labels.resize(static_cast<std::size_t>(len));
    for (Eigen::Index i = 0; i < len; ++i) {
      const Eigen::Index src = order[static_cast<std::size_t>(start + i)];
      b.features.row(i) = p.proxy.features.row(src);
      b.labels[static_cast<std::size_t>(i)] = p.proxy.labels[static_cast<std::size_t>(src)];
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

LearnResult learn_generic(const nn::ModelSpec& spec, std::span<const fl::ClientUpdate> updates,
                          const data::Dataset& proxy, const ServerOptConfig& config,
                          bool opt_gamma, bool opt_lambda) {
  config.validate();
  Problem p = make_problem(spec, updates, proxy);

  double gamma = 1.0;
  LambdaParam lp{init_x(p, updates, config.base_fn), config.base_fn};
  AdamState gamma_state = AdamState::zeros(1);
  AdamState x_state = AdamState::zeros(lp.x.size());
  Rng rng(derive_seed(config.shuffle_seed, seed_tag::server_opt));

  const double init_loss = full_proxy_loss(p, 1.0, p.lambda_ds);
  Best best{1.0, p.lambda_ds, init_loss};

  LearnResult result;
  result.init_loss = init_loss;
  const bool full_batch =
      config.proxy_batch_size <= 0 || config.proxy_batch_size >= p.proxy.size();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& batch : proxy_batches(p, config.proxy_batch_size, rng)) {
      const Eigen::VectorXd lambda = opt_lambda ? to_lambda(lp) : p.lambda_ds;
      const auto grad = weight_grad_at(p.spec, p.models, gamma, lambda, batch);
      if (full_batch) best.offer(gamma, lambda, grad.loss);
      if (opt_gamma) {
        Eigen::VectorXd g1(1), d1(1);
        g1[0] = gamma;
        d1[0] = grad.d_gamma;
        gamma = adam_step(g1, d1, gamma_state, config.lr_gamma, config.beta1, config.beta2,
                          config.adam_eps)[0];
        gamma = std::max(gamma, kGammaFloor);
      }
      if (opt_lambda) {
        const Eigen::VectorXd d_x = apply_base_jacobian(lp, lambda, grad.d_lambda);
        lp.x = adam_step(lp.x, d_x, x_state, config.lr_lambda, config.beta1, config.beta2,
                         config.adam_eps);
      }
    }
    if (!full_batch)
      best.offer(gamma, opt_lambda ? to_lambda(lp) : p.lambda_ds,
                 full_proxy_loss(p, gamma, opt_lambda ? to_lambda(lp) : p.lambda_ds));
    result.gamma_path.push_back(gamma);
    result.x_path.push_back(lp.x);
  }
  // The final iterate was stepped to but never scored inside the loop.
  if (full_batch) {
    const Eigen::VectorXd lambda = opt_lambda ? to_lambda(lp) : p.lambda_ds;
    best.offer(gamma, lambda, full_proxy_loss(p, gamma, lambda));
  }

  result.weights = fl::AggWeights{best.gamma, best.lambda};
  result.best_loss = best.loss;
  return result;
}

}  // namespace

LearnResult learn_gamma(const nn::ModelSpec& spec, std::span<const fl::ClientUpdate> updates,
                        const data::Dataset& proxy, const ServerOptConfig& config) {
  return learn_generic(spec, updates, proxy, config, true, false);
}

LearnResult learn_lambda(const nn::ModelSpec& spec, std::span<const fl::ClientUpdate> updates,
                         const data::Dataset& proxy, const ServerOptConfig& config) {
  return learn_generic(spec, updates, proxy, config, false, true);
}

LearnResult learn_joint(const nn::ModelSpec& spec, std::span<const fl::ClientUpdate> updates,
                        const data::Dataset& proxy, const ServerOptConfig& config) {
  return learn_generic(spec, updates, proxy, config, true, true);
}

LearnResult learn_two_stage_swa(const nn::ModelSpec& spec,
                                std::span<const fl::ClientUpdate> updates,
                                const data::Dataset& proxy, const ServerOptConfig& config) {
  config.validate();
  LearnResult stage1 = learn_gamma(spec, updates, proxy, config);
  const double gamma = stage1.weights.gamma;

  Problem p = make_problem(spec, updates, proxy);
  LambdaParam lp{init_x(p, updates, config.base_fn), config.base_fn};
  AdamState x_state = AdamState::zeros(lp.x.size());
  Rng rng(derive_seed(config.shuffle_seed, seed_tag::server_opt, 1));

  LearnResult result;
  result.init_loss = stage1.init_loss;
  result.gamma_path = stage1.gamma_path;

  const int cycle = config.swa_cycle_len;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Learning rate slides linearly from high to low within each cycle.
    const int pos = epoch % cycle;
    const double frac = (cycle > 1) ? static_cast<double>(pos) / (cycle - 1) : 0.0;
    const double lr = config.swa_lr_high + frac * (config.swa_lr_low - config.swa_lr_high);

    for (const auto& batch : proxy_batches(p, config.proxy_batch_size, rng)) {
      const Eigen::VectorXd lambda = to_lambda(lp);
      const auto grad = weight_grad_at(p.spec, p.models, gamma, lambda, batch);
      const Eigen::VectorXd d_x = apply_base_jacobian(lp, lambda, grad.d_lambda);
      lp.x = adam_step(lp.x, d_x, x_state, lr, config.beta1, config.beta2, config.adam_eps);
    }
    result.x_path.push_back(lp.x);
    if ((epoch + 1) % cycle == 0) result.swa_collected.push_back(to_lambda(lp));
  }
  if (result.swa_collected.empty()) result.swa_collected.push_back(to_lambda(lp));

  Eigen::VectorXd averaged = Eigen::VectorXd::Zero(lp.x.size());
  for (const auto& l : result.swa_collected) averaged += l;
  averaged /= averaged.sum();

  const double swa_loss = full_proxy_loss(p, gamma, averaged);
  if (swa_loss <= result.init_loss) {
    result.weights = fl::AggWeights{gamma, averaged};
    result.best_loss = swa_loss;
  } else {  // best-so-far guarantee: never worse than the starting point
    result.weights = fl::AggWeights{1.0, p.lambda_ds};
    result.best_loss = result.init_loss;
  }
  return result;
}

LearnResult early_stopped_law(int round, int stop_round, const nn::ModelSpec& spec,
                              std::span<const fl::ClientUpdate> updates,
                              const data::Dataset& proxy, const ServerOptConfig& config) {
  if (round <= stop_round) return learn_lambda(spec, updates, proxy, config);
  Problem p = make_problem(spec, updates, proxy);
  LearnResult result;
  result.init_loss = full_proxy_loss(p, 1.0, p.lambda_ds);
  result.best_loss = result.init_loss;
  result.weights = fl::AggWeights{1.0, p.lambda_ds};
  return result;
}

nn::ParamVector<float> server_finetune(const nn::ModelSpec& spec,
                                       const nn::ParamVector<float>& params,
                                       const data::Dataset& proxy,
                                       const ServerOptConfig& config) {
  config.validate();
  if (proxy.size() == 0) throw std::domain_error("server_finetune needs a nonempty proxy");
  Eigen::VectorXd w = params.data.cast<double>();
  AdamState state = AdamState::zeros(w.size());
  Rng rng(derive_seed(config.shuffle_seed, seed_tag::server_opt, 2));
  const Eigen::Index n = proxy.size();
  const auto full_batch = proxy.as_batch();
  const bool use_full = config.proxy_batch_size <= 0 || config.proxy_batch_size >= n;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (int epoch = 0; epoch < config.server_ft_epochs; ++epoch) {
    if (use_full) {
      nn::ParamVector<float> wf{w.cast<float>(), params.layout};
      const auto lg = nn::loss_grad(spec, wf, full_batch);
      w = adam_step(w, lg.grad.data.cast<double>(), state, config.server_ft_lr, config.beta1,
                    config.beta2, config.adam_eps);
      continue;
    }
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (Eigen::Index start = 0; start < n; start += config.proxy_batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(config.proxy_batch_size, n - start);
      nn::Batch<float> batch;
      batch.features.resize(len, proxy.dim());
      batch.labels.resize(static_cast<std::size_t>(len));
      for (Eigen::Index i = 0; i < len; ++i) {
        const Eigen::Index src = order[static_cast<std::size_t>(start + i)];
        batch.features.row(i) = proxy.features.row(src);
        batch.labels[static_cast<std::size_t>(i)] = proxy.labels[static_cast<std::size_t>(src)];
      }
      nn::ParamVector<float> wf{w.cast<float>(), params.layout};
      const auto lg = nn::loss_grad(spec, wf, batch);
      w = adam_step(w, lg.grad.data.cast<double>(), state, config.server_ft_lr, config.beta1,
                    config.beta2, config.adam_eps);
    }
  }
  return {w.cast<float>(), params.layout};
}

}  // namespace fedlaw::law

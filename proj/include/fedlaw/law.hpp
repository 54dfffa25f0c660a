#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fedlaw/errors.hpp"
#include "fedlaw/fl.hpp"
#include "fedlaw/mlp.hpp"

namespace fedlaw::law {

enum class BaseFn { Exponential, Quadratic };

/// Unconstrained parameterization of the lambda simplex through a base
/// function: Exponential lambda_i = e^{x_i} / sum_j e^{x_j} (softmax),
/// Quadratic lambda_i = x_i^2 / sum_j x_j^2.
struct LambdaParam {
  Eigen::VectorXd x;
  BaseFn base_fn = BaseFn::Exponential;
};

/// Maps x to a valid simplex vector. Exponential uses max-subtraction;
/// Quadratic throws on all-zero x.
Eigen::VectorXd to_lambda(const LambdaParam& param);

/// Pulls a gradient w.r.t. lambda back through the base function:
/// returns dL/dx given lambda = to_lambda(param) and d_lambda = dL/dlambda.
Eigen::VectorXd apply_base_jacobian(const LambdaParam& param, const Eigen::VectorXd& lambda,
                                    const Eigen::VectorXd& d_lambda);

/// Server optimizer settings for learning (gamma, lambda) on the proxy set.
struct ServerOptConfig {
  int epochs = 100;
  double lr_gamma = 0.005;
  double lr_lambda = 0.01;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int proxy_batch_size = 0;  // 0 = full batch
  int swa_cycle_len = 10;
  double swa_lr_high = 0.02;
  double swa_lr_low = 0.002;
  BaseFn base_fn = BaseFn::Exponential;
  std::uint64_t shuffle_seed = 0;  // only consumed when mini-batching
  int server_ft_epochs = 2;
  double server_ft_lr = 1e-3;

  void validate() const {
    if (epochs < 1) throw config_error("server_opt.epochs must be >= 1");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw config_error("server_opt betas must be in [0,1)");
    if (!(lr_gamma > 0.0) || !(lr_lambda > 0.0))
      throw config_error("server_opt learning rates must be > 0");
    if (swa_cycle_len < 1) throw config_error("server_opt.swa_cycle_len must be >= 1");
    if (proxy_batch_size < 0) throw config_error("server_opt.proxy_batch_size must be >= 0");
  }
};

constexpr double kGammaFloor = 1e-3;

/// Standard bias-corrected Adam buffers.
struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;

  static AdamState zeros(Eigen::Index n) {
    return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
  }
};

/// One bias-corrected Adam update; mutates `state`, returns new params.
Eigen::VectorXd adam_step(const Eigen::VectorXd& params, const Eigen::VectorXd& grads,
                          AdamState& state, double lr, double beta1, double beta2,
                          double eps);

/// gamma * sum_i lambda_i * w_i, accumulated in double.
template <typename Scalar>
nn::ParamVector<Scalar> combine_models(const std::vector<const nn::ParamVector<Scalar>*>& models,
                                       double gamma, const Eigen::VectorXd& lambda) {
  if (models.empty()) throw shape_error("combine_models needs at least one model");
  if (lambda.size() != static_cast<Eigen::Index>(models.size()))
    throw shape_error("lambda length does not match model count");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(models.front()->data.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i]->layout != models.front()->layout)
      throw shape_error("models have mismatched layouts");
    acc += lambda[static_cast<Eigen::Index>(i)] * models[i]->data.template cast<double>();
  }
  acc *= gamma;
  return {acc.template cast<Scalar>(), models.front()->layout};
}

template <typename Scalar>
struct WeightGrad {
  double loss = 0.0;
  double d_gamma = 0.0;
  Eigen::VectorXd d_lambda;
  Eigen::VectorXd d_x;
};

/// Proxy loss at w(gamma, lambda) = gamma * sum_i lambda_i w_i together with
/// the chain-rule gradients: dL/dgamma = <dL/dw, sum_i lambda_i w_i> and
/// dL/dlambda_i = gamma * <dL/dw, w_i>.
template <typename Scalar>
WeightGrad<Scalar> weight_grad_at(const nn::ModelSpec& spec,
                                  const std::vector<const nn::ParamVector<Scalar>*>& models,
                                  double gamma, const Eigen::VectorXd& lambda,
                                  const nn::Batch<Scalar>& proxy_batch) {
  Eigen::VectorXd model_sum = Eigen::VectorXd::Zero(models.front()->data.size());
  for (std::size_t i = 0; i < models.size(); ++i)
    model_sum += lambda[static_cast<Eigen::Index>(i)] * models[i]->data.template cast<double>();
  nn::ParamVector<Scalar> aggregated{(gamma * model_sum).template cast<Scalar>(),
                                     models.front()->layout};
  auto lg = nn::loss_grad(spec, aggregated, proxy_batch);
  const Eigen::VectorXd dldw = lg.grad.data.template cast<double>();
  WeightGrad<Scalar> out;
  out.loss = lg.loss;
  out.d_gamma = dldw.dot(model_sum);
  out.d_lambda.resize(static_cast<Eigen::Index>(models.size()));
  for (std::size_t i = 0; i < models.size(); ++i)
    out.d_lambda[static_cast<Eigen::Index>(i)] =
        gamma * dldw.dot(models[i]->data.template cast<double>());
  return out;
}

/// weight_grad_at plus the base-function pullback dL/dx.
template <typename Scalar>
WeightGrad<Scalar> agg_weight_grad(const nn::ModelSpec& spec,
                                   const std::vector<const nn::ParamVector<Scalar>*>& models,
                                   double gamma, const LambdaParam& lambda_param,
                                   const nn::Batch<Scalar>& proxy_batch) {
  const Eigen::VectorXd lambda = to_lambda(lambda_param);
  WeightGrad<Scalar> out = weight_grad_at(spec, models, gamma, lambda, proxy_batch);
  out.d_x = apply_base_jacobian(lambda_param, lambda, out.d_lambda);
  return out;
}

/// Outcome of one server-side weight-learning invocation. `weights` is the
/// best-full-proxy-loss iterate seen (the initialization included).
struct LearnResult {
  fl::AggWeights weights;
  double best_loss = 0.0;
  double init_loss = 0.0;
  std::vector<double> gamma_path;               // iterate after each epoch
  std::vector<Eigen::VectorXd> x_path;          // iterate after each epoch
  std::vector<Eigen::VectorXd> swa_collected;   // cycle-end lambdas (SWA only)
};

/// Learns gamma alone, lambda frozen at data-size weights; gamma starts at 1.
LearnResult learn_gamma(const nn::ModelSpec& spec, std::span<const fl::ClientUpdate> updates,
                        const data::Dataset& proxy, const ServerOptConfig& config);

/// Learns lambda alone with gamma = 1; x starts at the data-size weights.
LearnResult learn_lambda(const nn::ModelSpec& spec, std::span<const fl::ClientUpdate> updates,
                         const data::Dataset& proxy, const ServerOptConfig& config);

/// Learns (gamma, lambda) simultaneously from (1, data-size weights).
LearnResult learn_joint(const nn::ModelSpec& spec, std::span<const fl::ClientUpdate> updates,
                        const data::Dataset& proxy, const ServerOptConfig& config);

/// Stage 1 learns gamma; stage 2 re-learns lambda under a cyclical learning
/// rate at the fixed gamma, averaging the cycle-end lambda iterates.
LearnResult learn_two_stage_swa(const nn::ModelSpec& spec,
                                std::span<const fl::ClientUpdate> updates,
                                const data::Dataset& proxy, const ServerOptConfig& config);

/// Attentive LAW while round <= stop_round, data-size weights afterwards.
LearnResult early_stopped_law(int round, int stop_round, const nn::ModelSpec& spec,
                              std::span<const fl::ClientUpdate> updates,
                              const data::Dataset& proxy, const ServerOptConfig& config);

/// Adam fine-tuning of the aggregated model itself on the proxy set
/// (the Server-FT baseline); returns the tuned parameters.
nn::ParamVector<float> server_finetune(const nn::ModelSpec& spec,
                                       const nn::ParamVector<float>& params,
                                       const data::Dataset& proxy,
                                       const ServerOptConfig& config);

}  // namespace fedlaw::law

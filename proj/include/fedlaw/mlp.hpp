#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <vector>

#include "fedlaw/errors.hpp"
#include "fedlaw/param_vector.hpp"
#include "fedlaw/rng.hpp"

namespace fedlaw::nn {

/// Fully-connected ReLU classifier architecture. layer_sizes holds
/// (input dim, hidden dims..., class count); ReLU between all hidden
/// layers, identity before the softmax cross-entropy loss.
struct ModelSpec {
  std::vector<int> layer_sizes;

  ModelSpec() = default;
  explicit ModelSpec(std::vector<int> sizes) : layer_sizes(std::move(sizes)) { validate(); }

  void validate() const {
    if (layer_sizes.size() < 2)
      throw shape_error("model spec needs at least input and output dims");
    for (int s : layer_sizes)
      if (s < 1) throw shape_error("model spec dims must be >= 1");
  }

  int input_dim() const { return layer_sizes.front(); }
  int num_classes() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }

  Layout layout() const {
    Layout out;
    out.reserve(layer_sizes.size() - 1);
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
      out.push_back({layer_sizes[l], layer_sizes[l + 1], layer_sizes[l + 1]});
    return out;
  }

  std::int64_t num_params() const { return layout_total(layout()); }
};

/// A batch of samples: one feature row per sample plus class labels.
template <typename Scalar>
struct Batch {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> features;
  std::vector<int> labels;

  Eigen::Index size() const { return features.rows(); }
};

template <typename Scalar>
struct MomentumState {
  Eigen::VectorX<Scalar> velocity;

  static MomentumState zeros(const ParamVector<Scalar>& params) {
    return {Eigen::VectorX<Scalar>::Zero(params.data.size())};
  }
};

namespace detail {

template <typename Scalar>
using RowMajorMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using WeightMap = Eigen::Map<const RowMajorMat<Scalar>>;
template <typename Scalar>
using BiasMap = Eigen::Map<const Eigen::VectorX<Scalar>>;
template <typename Scalar>
using MutWeightMap = Eigen::Map<RowMajorMat<Scalar>>;
template <typename Scalar>
using MutBiasMap = Eigen::Map<Eigen::VectorX<Scalar>>;

/// Offset of layer l's weight block inside the flat vector.
inline std::int64_t layer_offset(const Layout& layout, std::size_t l) {
  std::int64_t off = 0;
  for (std::size_t i = 0; i < l; ++i) off += layout[i].total();
  return off;
}

template <typename Scalar>
void check_model_inputs(const ModelSpec& spec, const ParamVector<Scalar>& params,
                        const Batch<Scalar>& batch) {
  if (params.layout != spec.layout() || params.data.size() != spec.num_params())
    throw shape_error("params layout does not match model spec");
  if (batch.features.cols() != spec.input_dim())
    throw shape_error("batch feature dim does not match model input dim");
  if (batch.features.rows() != static_cast<Eigen::Index>(batch.labels.size()))
    throw shape_error("batch feature rows do not match label count");
  if (batch.features.rows() == 0) throw shape_error("empty batch");
  for (int y : batch.labels)
    if (y < 0 || y >= spec.num_classes()) throw shape_error("label out of class range");
}

/// Mean softmax cross-entropy over logit rows, accumulated per row in
/// double so that e.g. the all-zero model hits ln(K) to ~1e-15.
template <typename Scalar>
double mean_cross_entropy(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& logits,
    const std::vector<int>& labels) {
  double acc = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Eigen::VectorXd z = logits.row(r).transpose().template cast<double>();
    const double zmax = z.maxCoeff();
    const double lse = zmax + std::log((z.array() - zmax).exp().sum());
    acc += lse - z[labels[static_cast<std::size_t>(r)]];
  }
  return acc / static_cast<double>(logits.rows());
}

}  // namespace detail

/// Fan-in-scaled uniform init (+-sqrt(6/fan_in)), biases zero.
/// Bit-identical output for identical (spec, seed).
template <typename Scalar = float>
ParamVector<Scalar> init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Layout layout = spec.layout();
  Eigen::VectorX<Scalar> data = Eigen::VectorX<Scalar>::Zero(layout_total(layout));
  Rng rng(derive_seed(seed, seed_tag::init_model));
  std::int64_t off = 0;
  for (const auto& shape : layout) {
    const double bound = std::sqrt(6.0 / static_cast<double>(shape.rows));
    for (std::int64_t i = 0; i < shape.rows * shape.cols; ++i)
      data[off + i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    off += shape.total();  // biases stay zero
  }
  return {std::move(data), layout};
}

template <typename Scalar>
struct ForwardResult {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> logits;
  double loss = 0.0;
};

/// Forward pass: ReLU hidden layers, identity output, mean softmax
/// cross-entropy loss.
template <typename Scalar>
ForwardResult<Scalar> forward(const ModelSpec& spec, const ParamVector<Scalar>& params,
                              const Batch<Scalar>& batch) {
  detail::check_model_inputs(spec, params, batch);
  const Layout& layout = params.layout;

  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> act = batch.features;
  std::int64_t off = 0;
  for (std::size_t l = 0; l < layout.size(); ++l) {
    const auto& shape = layout[l];
    detail::WeightMap<Scalar> w(params.data.data() + off, shape.rows, shape.cols);
    detail::BiasMap<Scalar> b(params.data.data() + off + shape.rows * shape.cols, shape.bias);
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> z =
        (act * w).rowwise() + b.transpose();
    if (l + 1 < layout.size()) z = z.cwiseMax(Scalar(0));
    act = std::move(z);
    off += shape.total();
  }
  const double loss = detail::mean_cross_entropy(act, batch.labels);
  return {std::move(act), loss};
}

template <typename Scalar>
struct LossGrad {
  double loss = 0.0;
  ParamVector<Scalar> grad;
};

/// Loss and analytic gradient of the mean cross-entropy w.r.t. all
/// parameters, in the same flat layout as `params`.
template <typename Scalar>
LossGrad<Scalar> loss_grad(const ModelSpec& spec, const ParamVector<Scalar>& params,
                           const Batch<Scalar>& batch) {
  detail::check_model_inputs(spec, params, batch);
  const Layout& layout = params.layout;
  const Eigen::Index n = batch.features.rows();
  const std::size_t num_layers = layout.size();

  // Forward, keeping pre-activations for the ReLU masks.
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> acts(num_layers + 1);
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> pre(num_layers);
  acts[0] = batch.features;
  std::int64_t off = 0;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const auto& shape = layout[l];
    detail::WeightMap<Scalar> w(params.data.data() + off, shape.rows, shape.cols);
    detail::BiasMap<Scalar> b(params.data.data() + off + shape.rows * shape.cols, shape.bias);
    pre[l] = (acts[l] * w).rowwise() + b.transpose();
    acts[l + 1] = (l + 1 < num_layers) ? pre[l].cwiseMax(Scalar(0)) : pre[l];
    off += shape.total();
  }
  const double loss = detail::mean_cross_entropy(acts[num_layers], batch.labels);

  // d(mean loss)/d(logits) = (softmax - onehot) / n, rows independent.
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> delta = acts[num_layers];
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::VectorXd z = delta.row(r).transpose().template cast<double>();
    const double zmax = z.maxCoeff();
    Eigen::VectorXd p = (z.array() - zmax).exp();
    p /= p.sum();
    p[batch.labels[static_cast<std::size_t>(r)]] -= 1.0;
    delta.row(r) = (p / static_cast<double>(n)).template cast<Scalar>().transpose();
  }

  ParamVector<Scalar> grad{Eigen::VectorX<Scalar>::Zero(params.data.size()), layout};
  for (std::size_t li = num_layers; li-- > 0;) {
    const auto& shape = layout[li];
    const std::int64_t loff = detail::layer_offset(layout, li);
    detail::MutWeightMap<Scalar> dw(grad.data.data() + loff, shape.rows, shape.cols);
    detail::MutBiasMap<Scalar> db(grad.data.data() + loff + shape.rows * shape.cols,
                                  shape.bias);
    dw.noalias() = acts[li].transpose() * delta;
    db = delta.colwise().sum().transpose();
    if (li > 0) {
      detail::WeightMap<Scalar> w(params.data.data() + loff, shape.rows, shape.cols);
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> next = delta * w.transpose();
      delta = next.cwiseProduct(
          (pre[li - 1].array() > Scalar(0)).template cast<Scalar>().matrix());
    }
  }
  return {loss, std::move(grad)};
}

/// SGD with classical momentum and coupled weight decay:
///   v <- momentum * v + (g + wd * p);  p <- p - lr * v.
/// Mutates `state`, returns the stepped parameters.
template <typename Scalar>
ParamVector<Scalar> sgd_step(const ParamVector<Scalar>& params,
                             const ParamVector<Scalar>& grad, double lr, double momentum,
                             double weight_decay, MomentumState<Scalar>& state) {
  check_same_layout(params, grad);
  if (state.velocity.size() != params.data.size())
    throw shape_error("momentum state does not match params");
  if (!(lr > 0.0)) throw shape_error("sgd_step requires lr > 0");
  state.velocity = (Scalar(momentum) * state.velocity +
                    (grad.data + Scalar(weight_decay) * params.data))
                       .eval();
  return {params.data - Scalar(lr) * state.velocity, params.layout};
}

}  // namespace fedlaw::nn

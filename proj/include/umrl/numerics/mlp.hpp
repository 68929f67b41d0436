#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

#include "umrl/numerics/error.hpp"
#include "umrl/numerics/param_vector.hpp"
#include "umrl/numerics/rng.hpp"

namespace umrl {

enum class Activation { Tanh, Relu };

inline std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + s + "'");
}

/// Fully connected network: hidden layers use `activation`, the output layer
/// is linear. Layer l stores "layer<l>.weight" (fan_out x fan_in, column-major)
/// followed by "layer<l>.bias".
struct MlpSpec {
  Index input_dim = 1;
  std::vector<Index> hidden_dims{64, 64};
  Index output_dim = 1;
  Activation activation = Activation::Tanh;

  std::size_t num_layers() const { return hidden_dims.size() + 1; }
  Index fan_in(std::size_t l) const { return l == 0 ? input_dim : hidden_dims[l - 1]; }
  Index fan_out(std::size_t l) const { return l == hidden_dims.size() ? output_dim : hidden_dims[l]; }

  Index parameter_count() const {
    Index n = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) n += (fan_in(l) + 1) * fan_out(l);
    return n;
  }

  void validate() const {
    if (input_dim <= 0 || output_dim <= 0) throw ConfigError("mlp: input/output dims must be positive");
    for (auto h : hidden_dims)
      if (h <= 0) throw ConfigError("mlp: hidden dims must be positive");
  }

  std::vector<Segment> segments(const std::string& prefix = {}) const {
    std::vector<Segment> segs;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const auto tag = prefix + "layer" + std::to_string(l);
      segs.push_back({tag + ".weight", {fan_out(l), fan_in(l)}});
      segs.push_back({tag + ".bias", {fan_out(l)}});
    }
    return segs;
  }

  LayoutPtr layout() const { return make_layout(segments()); }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

namespace detail {

// Name of the segment that a flat parameter buffer of length `n` falls short in.
inline std::string short_segment(const MlpSpec& spec, Index n) {
  Index off = 0;
  for (const auto& s : spec.segments()) {
    off += s.size();
    if (n < off) return s.name;
  }
  return "<trailing>";
}

template <typename Scalar>
void check_mlp_params(const MlpSpec& spec, Index n) {
  if (n != spec.parameter_count())
    throw DimensionError("mlp params: length " + std::to_string(n) + ", expected " +
                         std::to_string(spec.parameter_count()) + " (mismatch at segment '" +
                         short_segment(spec, n) + "')");
}

template <typename Derived>
void apply_activation(Activation act, Eigen::MatrixBase<Derived>& z) {
  if (act == Activation::Tanh)
    z.derived() = z.array().tanh().matrix();
  else
    z.derived() = z.array().max(typename Derived::Scalar(0)).matrix();
}

// Derivative of the activation expressed through its output.
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> activation_slope(
    Activation act, const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& out) {
  if (act == Activation::Tanh) return Scalar(1) - out.array().square();
  return (out.array() > Scalar(0)).template cast<Scalar>();
}

}  // namespace detail

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)); zero biases.
template <typename Scalar = double>
BasicParamVector<Scalar> mlp_init(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  BasicParamVector<Scalar> p(spec.layout());
  Index off = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const Index in = spec.fan_in(l), out = spec.fan_out(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (Index i = 0; i < in * out; ++i) p[off + i] = static_cast<Scalar>(rng.uniform(-limit, limit));
    off += in * out + out;
  }
  return p;
}

/// Activations of every layer for a batch of inputs (one column per sample):
/// activations[0] is the input, activations.back() the network output.
template <typename Scalar>
struct MlpTape {
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> activations;
  const auto& output() const { return activations.back(); }
};

template <typename Scalar, typename InputDerived>
MlpTape<Scalar> mlp_forward_tape(const MlpSpec& spec,
                                 const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& params,
                                 const Eigen::MatrixBase<InputDerived>& inputs) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  detail::check_mlp_params<Scalar>(spec, params.size());
  if (inputs.rows() != spec.input_dim)
    throw DimensionError("layer0.weight: input has " + std::to_string(inputs.rows()) +
                         " rows, expected " + std::to_string(spec.input_dim));
  MlpTape<Scalar> tape;
  tape.activations.reserve(spec.num_layers() + 1);
  tape.activations.emplace_back(inputs.template cast<Scalar>());
  Index off = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const Index in = spec.fan_in(l), out = spec.fan_out(l);
    Eigen::Map<const Matrix> w(params.data() + off, out, in);
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> b(params.data() + off + in * out, out);
    off += in * out + out;
    Matrix z = w * tape.activations.back();
    z.colwise() += b;
    if (l + 1 < spec.num_layers()) detail::apply_activation(spec.activation, z);
    tape.activations.push_back(std::move(z));
  }
  return tape;
}

template <typename Scalar, typename InputDerived>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> mlp_forward_batch(
    const MlpSpec& spec, const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& params,
    const Eigen::MatrixBase<InputDerived>& inputs) {
  return std::move(mlp_forward_tape<Scalar>(spec, params, inputs).activations.back());
}

template <typename Scalar, typename InputDerived>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mlp_forward(const MlpSpec& spec,
                                                     const BasicParamVector<Scalar>& params,
                                                     const Eigen::MatrixBase<InputDerived>& input) {
  if (input.cols() != 1) throw DimensionError("mlp_forward: expected a single input column");
  return mlp_forward_batch<Scalar>(spec, params.values(), input).col(0);
}

/// Gradients of sum_n <output_grads.col(n), f(inputs.col(n))>, i.e. summed
/// over the batch.
template <typename Scalar>
struct MlpBatchGradient {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> params;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> inputs;
};

template <typename Scalar, typename GradDerived>
MlpBatchGradient<Scalar> mlp_backward_tape(const MlpSpec& spec,
                                           const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& params,
                                           const MlpTape<Scalar>& tape,
                                           const Eigen::MatrixBase<GradDerived>& output_grads) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  if (output_grads.rows() != spec.output_dim || output_grads.cols() != tape.output().cols())
    throw DimensionError("layer" + std::to_string(spec.num_layers() - 1) +
                         ".weight: output gradient has shape " + std::to_string(output_grads.rows()) + "x" +
                         std::to_string(output_grads.cols()) + ", expected " + std::to_string(spec.output_dim) +
                         "x" + std::to_string(tape.output().cols()));
  MlpBatchGradient<Scalar> g;
  g.params = Vector::Zero(spec.parameter_count());

  std::vector<Index> offsets;
  Index off = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    offsets.push_back(off);
    off += spec.fan_in(l) * spec.fan_out(l) + spec.fan_out(l);
  }

  Matrix delta = output_grads.template cast<Scalar>();
  for (std::size_t l = spec.num_layers(); l-- > 0;) {
    const Index in = spec.fan_in(l), out = spec.fan_out(l);
    const Matrix& a_in = tape.activations[l];
    Eigen::Map<Matrix>(g.params.data() + offsets[l], out, in).noalias() = delta * a_in.transpose();
    Eigen::Map<Vector>(g.params.data() + offsets[l] + in * out, out) = delta.rowwise().sum();
    Eigen::Map<const Matrix> w(params.data() + offsets[l], out, in);
    Matrix back = w.transpose() * delta;
    if (l > 0)
      delta = (back.array() * detail::activation_slope<Scalar>(spec.activation, a_in)).matrix();
    else
      g.inputs = std::move(back);
  }
  return g;
}

template <typename Scalar, typename InputDerived, typename GradDerived>
MlpBatchGradient<Scalar> mlp_backward_batch(const MlpSpec& spec,
                                            const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& params,
                                            const Eigen::MatrixBase<InputDerived>& inputs,
                                            const Eigen::MatrixBase<GradDerived>& output_grads) {
  return mlp_backward_tape<Scalar>(spec, params, mlp_forward_tape<Scalar>(spec, params, inputs), output_grads);
}

template <typename Scalar>
struct MlpGradient {
  BasicParamVector<Scalar> params;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> input;
};

template <typename Scalar, typename InputDerived, typename GradDerived>
MlpGradient<Scalar> mlp_backward(const MlpSpec& spec, const BasicParamVector<Scalar>& params,
                                 const Eigen::MatrixBase<InputDerived>& input,
                                 const Eigen::MatrixBase<GradDerived>& output_grad) {
  if (input.cols() != 1 || output_grad.cols() != 1)
    throw DimensionError("mlp_backward: expected single input and output-gradient columns");
  auto g = mlp_backward_batch<Scalar>(spec, params.values(), input, output_grad);
  return {BasicParamVector<Scalar>(params.layout_ptr(), std::move(g.params)), g.inputs.col(0)};
}

}  // namespace umrl

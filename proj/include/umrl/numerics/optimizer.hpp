#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <string>

#include "umrl/numerics/error.hpp"
#include "umrl/numerics/param_vector.hpp"

namespace umrl {

enum class OptimizerKind { Sgd, Adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

/// Gradient-ascent optimizer state. Every objective in this library is
/// maximized, so a step moves along +grad.
template <typename Scalar = double>
struct BasicOptimizerState {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  OptimizerKind kind = OptimizerKind::Adam;
  Scalar step_size = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
  std::int64_t step = 0;
  Vector first_moment;
  Vector second_moment;

  static BasicOptimizerState make(OptimizerKind kind, Scalar step_size, Index param_count) {
    if (!(step_size > 0)) throw ConfigError("optimizer step_size must be positive");
    BasicOptimizerState s;
    s.kind = kind;
    s.step_size = step_size;
    if (kind == OptimizerKind::Adam) {
      s.first_moment = Vector::Zero(param_count);
      s.second_moment = Vector::Zero(param_count);
    }
    return s;
  }
};

using OptimizerState = BasicOptimizerState<double>;

template <typename Scalar>
BasicParamVector<Scalar> optimizer_step(BasicOptimizerState<Scalar>& state, const BasicParamVector<Scalar>& params,
                                        const BasicParamVector<Scalar>& grad) {
  params.require_same_layout(grad, "optimizer_step");
  grad.require_finite("optimizer_step gradient");
  BasicParamVector<Scalar> next = params;
  ++state.step;
  if (state.kind == OptimizerKind::Sgd) {
    next.values() += state.step_size * grad.values();
  } else {
    if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
      throw DimensionError("optimizer_step: moment buffers sized " + std::to_string(state.first_moment.size()) +
                           ", parameters " + std::to_string(params.size()));
    const auto& g = grad.values();
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * g;
    state.second_moment = state.beta2 * state.second_moment + (1 - state.beta2) * g.cwiseProduct(g);
    const Scalar c1 = 1 - std::pow(state.beta1, static_cast<Scalar>(state.step));
    const Scalar c2 = 1 - std::pow(state.beta2, static_cast<Scalar>(state.step));
    next.values().array() += state.step_size * (state.first_moment.array() / c1) /
                             ((state.second_moment.array() / c2).sqrt() + state.epsilon);
  }
  next.require_finite("optimizer_step result");
  return next;
}

}  // namespace umrl

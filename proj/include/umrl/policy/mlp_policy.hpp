#pragma once

#include <Eigen/Core>

#include <optional>
#include <vector>

#include "umrl/envs/cmp.hpp"
#include "umrl/numerics/mlp.hpp"
#include "umrl/numerics/param_vector.hpp"

namespace umrl::policy {

using envs::Matrix;
using envs::Vector;

/// Stochastic MLP policy over a CMP's action space. Parameters are the
/// network ("net.layer<l>.*") followed, for continuous actions, by a
/// state-independent "log_std" segment.
///
/// Discrete actions: the network emits logits. Continuous actions: the network
/// emits the Gaussian mean in normalized action units.
struct PolicySpec {
  MlpSpec net;
  envs::ActionSpace actions = envs::DiscreteActions{};
  double init_log_std = 0.0;

  static PolicySpec for_cmp(const envs::CmpSpec& cmp, std::vector<Index> hidden = {64, 64},
                            Activation activation = Activation::Tanh, Index extra_inputs = 0);

  bool continuous() const { return !envs::is_discrete(actions); }
  Index input_dim() const { return net.input_dim; }
  Index action_dim() const { return envs::action_dim(actions); }
  Index parameter_count() const { return net.parameter_count() + (continuous() ? net.output_dim : 0); }
  LayoutPtr layout() const;
  ParamVector init(Rng& rng) const;
  void check(const ParamVector& theta) const;
};

envs::PolicySample act(const PolicySpec& spec, const ParamVector& theta, const Vector& input, Rng& rng);

/// Binds parameters (copied) into a rollout policy. When `latent` is given it
/// is appended to every state before the network sees it.
envs::PolicyFn bind(const PolicySpec& spec, ParamVector theta, std::optional<Vector> latent = std::nullopt);

/// log pi(a_n | x_n) for a batch (one column per sample).
Vector log_probs(const PolicySpec& spec, const ParamVector& theta, const Matrix& inputs, const Matrix& actions);

/// Per-sample policy entropies.
Vector entropies(const PolicySpec& spec, const ParamVector& theta, const Matrix& inputs);

/// sum_n weights_n * grad log pi(a_n|x_n) + entropy_weight * sum_n grad H(pi(.|x_n)).
ParamVector weighted_score(const PolicySpec& spec, const ParamVector& theta, const Matrix& inputs,
                           const Matrix& actions, const Vector& weights, double entropy_weight = 0.0);

}  // namespace umrl::policy

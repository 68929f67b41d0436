#include "umrl/meta/policy_gradient.hpp"

#include <cmath>

#include "umrl/numerics/error.hpp"

namespace umrl::meta {

std::string to_string(Baseline b) { return b == Baseline::None ? "none" : "per-timestep-mean"; }

Baseline parse_baseline(const std::string& s) {
  if (s == "none") return Baseline::None;
  if (s == "per-timestep-mean") return Baseline::PerTimestepMean;
  throw ConfigError("unknown baseline '" + s + "'");
}

void PolicyGradConfig::validate() const {
  if (!(inner_step_size >= 0.0)) throw ConfigError("inner_step_size must be non-negative");
  if (rollouts_per_task < 1) throw ConfigError("rollouts_per_task must be >= 1");
  if (baseline == Baseline::PerTimestepMean && rollouts_per_task < 2)
    throw ConfigError("rollouts_per_task must be >= 2 with the per-timestep-mean baseline");
  if (!(entropy_bonus >= 0.0)) throw ConfigError("entropy_bonus must be non-negative");
}

GradientBatch policy_gradient_from_batch(const PolicySpec& spec, const ParamVector& theta,
                                         std::span<const envs::Trajectory> batch, double gamma,
                                         const PolicyGradConfig& cfg, const std::vector<Vector>* latents) {
  if (batch.empty()) throw RuntimeFailure("policy gradient: empty batch");
  const auto n_traj = static_cast<Index>(batch.size());
  if (cfg.baseline == Baseline::PerTimestepMean && n_traj < 2)
    throw ConfigError("policy gradient: per-timestep-mean baseline needs >= 2 rollouts");
  const int horizon = batch.front().horizon();
  const Index latent_dim = latents ? latents->front().size() : 0;

  Matrix returns(horizon, n_traj);
  double total = 0.0;
  for (Index i = 0; i < n_traj; ++i) {
    const auto& tr = batch[static_cast<std::size_t>(i)];
    if (tr.horizon() != horizon) throw DimensionError("policy gradient: trajectories differ in horizon");
    returns.col(i) = envs::discounted_returns(tr, gamma);
    total += tr.rewards->sum();
  }

  Matrix advantages = returns;
  if (cfg.baseline == Baseline::PerTimestepMean) {
    const Vector sums = returns.rowwise().sum();
    for (Index i = 0; i < n_traj; ++i)
      advantages.col(i) = returns.col(i) - (sums - returns.col(i)) / static_cast<double>(n_traj - 1);
  }
  if (cfg.normalize_advantages) {
    const double mean = advantages.mean();
    const double sd = std::sqrt((advantages.array() - mean).square().mean());
    if (sd > 1e-12)
      advantages = ((advantages.array() - mean) / sd).matrix();
    else
      advantages.setZero();
  }

  const Index samples = n_traj * horizon;
  Matrix inputs(spec.input_dim(), samples);
  Matrix actions(spec.action_dim(), samples);
  Vector weights(samples);
  for (Index i = 0; i < n_traj; ++i) {
    const auto& tr = batch[static_cast<std::size_t>(i)];
    const Index off = i * horizon;
    inputs.block(0, off, tr.states.rows(), horizon) = tr.states.leftCols(horizon);
    if (latent_dim > 0) inputs.block(tr.states.rows(), off, latent_dim, horizon).colwise() = (*latents)[i];
    actions.middleCols(off, horizon) = tr.actions;
    weights.segment(off, horizon) = advantages.col(i);
  }

  GradientBatch out;
  out.gradient = policy::weighted_score(spec, theta, inputs, actions, weights, cfg.entropy_bonus);
  out.gradient.values() /= static_cast<double>(n_traj);
  out.gradient.require_finite("policy gradient");
  out.mean_return = total / static_cast<double>(n_traj);
  out.rollouts = static_cast<int>(n_traj);
  return out;
}

GradientBatch estimate_policy_gradient(const envs::CmpSpec& cmp, const PolicySpec& spec, const ParamVector& theta,
                                       const envs::RewardFn& reward, const PolicyGradConfig& cfg, Rng& rng) {
  cfg.validate();
  const Rng base(rng.next_u64());
  const auto pi = policy::bind(spec, theta);
  std::vector<envs::Trajectory> batch;
  batch.reserve(static_cast<std::size_t>(cfg.rollouts_per_task));
  for (int i = 0; i < cfg.rollouts_per_task; ++i) {
    Rng r = base.substream(static_cast<std::uint64_t>(i));
    batch.push_back(envs::rollout(cmp, pi, reward, r));
  }
  return policy_gradient_from_batch(spec, theta, batch, cmp.discount, cfg);
}

ParamVector policy_gradient_estimate(const envs::CmpSpec& cmp, const PolicySpec& spec, const ParamVector& theta,
                                     const envs::RewardFn& reward, const PolicyGradConfig& cfg, Rng& rng) {
  return estimate_policy_gradient(cmp, spec, theta, reward, cfg, rng).gradient;
}

ParamVector inner_adapt(const ParamVector& theta, const envs::RewardFn& reward, const envs::CmpSpec& cmp,
                        const PolicySpec& spec, const PolicyGradConfig& cfg, Rng& rng, int steps) {
  if (steps < 1) throw ConfigError("inner_adapt: steps must be >= 1");
  ParamVector th = theta;
  for (int k = 0; k < steps; ++k) {
    const auto g = policy_gradient_estimate(cmp, spec, th, reward, cfg, rng);
    th.values() += cfg.inner_step_size * g.values();
    th.require_finite("inner_adapt");
  }
  return th;
}

double evaluate_return(const ParamVector& theta, const envs::RewardFn& reward, const envs::CmpSpec& cmp,
                       const PolicySpec& spec, int episodes, Rng& rng) {
  if (episodes < 1) throw ConfigError("evaluate_return: episodes must be >= 1");
  const Rng base(rng.next_u64());
  const auto pi = policy::bind(spec, theta);
  double total = 0.0;
  for (int i = 0; i < episodes; ++i) {
    Rng r = base.substream(static_cast<std::uint64_t>(i));
    total += envs::rollout(cmp, pi, reward, r).total_reward();
  }
  return total / episodes;
}

}  // namespace umrl::meta

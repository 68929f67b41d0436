#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "umrl/envs/cmp.hpp"
#include "umrl/numerics/param_vector.hpp"
#include "umrl/policy/mlp_policy.hpp"

namespace umrl::meta {

using envs::Matrix;
using envs::Vector;
using policy::PolicySpec;

enum class Baseline { None, PerTimestepMean };

std::string to_string(Baseline b);
Baseline parse_baseline(const std::string& s);

/// Inner-loop (adaptation) settings.
struct PolicyGradConfig {
  double inner_step_size = 0.1;
  int rollouts_per_task = 20;
  Baseline baseline = Baseline::PerTimestepMean;
  double entropy_bonus = 0.0;
  /// Standardize advantages over the batch (zero mean, unit variance) before
  /// weighting the score. Makes the step length independent of the reward
  /// scale; the estimate is then a rescaled, no longer unbiased, direction.
  bool normalize_advantages = false;

  void validate() const;
};

struct GradientBatch {
  ParamVector gradient;
  double mean_return = 0.0;  ///< undiscounted, averaged over the batch
  int rollouts = 0;
};

/// REINFORCE with reward-to-go from trajectories that already carry rewards:
///   g = (1/N) sum_i sum_t grad log pi(a_t|s_t) (G_t - b_t) + entropy_bonus * (1/N) sum_i sum_t grad H_t.
/// With the per-timestep-mean baseline, b_t for rollout i is the mean of G_t
/// over the other N-1 rollouts, which keeps the estimate unbiased.
/// `latents`, when given, holds one vector per trajectory appended to every
/// state before it reaches the policy.
GradientBatch policy_gradient_from_batch(const PolicySpec& spec, const ParamVector& theta,
                                         std::span<const envs::Trajectory> batch, double gamma,
                                         const PolicyGradConfig& cfg, const std::vector<Vector>* latents = nullptr);

/// Collects cfg.rollouts_per_task fresh rollouts and estimates the gradient.
GradientBatch estimate_policy_gradient(const envs::CmpSpec& cmp, const PolicySpec& spec, const ParamVector& theta,
                                       const envs::RewardFn& reward, const PolicyGradConfig& cfg, Rng& rng);

ParamVector policy_gradient_estimate(const envs::CmpSpec& cmp, const PolicySpec& spec, const ParamVector& theta,
                                     const envs::RewardFn& reward, const PolicyGradConfig& cfg, Rng& rng);

/// `steps` applications of theta <- theta + alpha * g(theta), fresh rollouts each step.
ParamVector inner_adapt(const ParamVector& theta, const envs::RewardFn& reward, const envs::CmpSpec& cmp,
                        const PolicySpec& spec, const PolicyGradConfig& cfg, Rng& rng, int steps = 1);

/// Mean undiscounted return of `episodes` fresh rollouts.
double evaluate_return(const ParamVector& theta, const envs::RewardFn& reward, const envs::CmpSpec& cmp,
                       const PolicySpec& spec, int episodes, Rng& rng);

}  // namespace umrl::meta

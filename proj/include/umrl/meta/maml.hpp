#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "umrl/meta/policy_gradient.hpp"
#include "umrl/numerics/optimizer.hpp"

namespace umrl::meta {

enum class MetaGradientMode { FirstOrder, FiniteDifferenceExact };

std::string to_string(MetaGradientMode m);
MetaGradientMode parse_meta_gradient_mode(const std::string& s);

/// Largest policy for which the finite-difference meta-gradient is allowed.
inline constexpr Index kMaxFiniteDifferenceParams = 2000;

struct MetaGradient {
  ParamVector gradient;
  double pre_adapt_return = 0.0;   ///< mean over tasks, before the inner step
  double post_adapt_return = 0.0;  ///< mean over tasks, after the inner step
};

/// First-order mode: task i adapts with one inner step drawn from
/// rng.substream(i).substream("inner"), then contributes the policy gradient
/// at the adapted parameters drawn from rng.substream(i).substream("outer").
/// Tasks run in parallel; the result does not depend on the worker count.
///
/// Finite-difference mode differentiates the post-adaptation return through the
/// inner step with common random numbers (see finite_difference_meta_gradient).
MetaGradient compute_meta_gradient(const ParamVector& theta, std::span<const envs::RewardFn> tasks,
                                   const envs::CmpSpec& cmp, const PolicySpec& spec, const PolicyGradConfig& cfg,
                                   MetaGradientMode mode, const Rng& rng);

ParamVector maml_meta_gradient(const ParamVector& theta, std::span<const envs::RewardFn> tasks,
                               const envs::CmpSpec& cmp, const PolicySpec& spec, const PolicyGradConfig& cfg,
                               MetaGradientMode mode, const Rng& rng);

/// What the finite-difference oracle differentiates: an inner gradient and an
/// expected return, both deterministic functions of the parameters.
struct AdaptationModel {
  std::function<ParamVector(const ParamVector&)> inner_gradient;
  std::function<double(const ParamVector&)> expected_return;
};

/// Central differences (coordinate-wise, step h) of
///   theta -> mean_i J_i(theta + alpha * g_i(theta)).
ParamVector finite_difference_meta_gradient(const ParamVector& theta, std::span<const AdaptationModel> tasks,
                                            double alpha, double h = 1e-4);

/// Monte-Carlo model with frozen random streams: every evaluation replays the
/// same rollout noise.
AdaptationModel crn_adaptation_model(const envs::CmpSpec& cmp, const PolicySpec& spec, envs::RewardFn reward,
                                     const PolicyGradConfig& cfg, Rng inner, Rng eval);

/// True if the CMP is discrete with deterministic dynamics and at most
/// `limit` action sequences.
bool is_enumerable(const envs::CmpSpec& cmp, double limit = 1e5);

/// Exact model by enumerating every action sequence. J is the expected
/// discounted return from s_0; the gradient is the exact expectation of the
/// reward-to-go estimator.
AdaptationModel exact_adaptation_model(const envs::CmpSpec& cmp, const PolicySpec& spec, envs::RewardFn reward);

using TaskSampler = std::function<envs::RewardFn(Rng&)>;

struct MetaLearnerState {
  PolicySpec policy;
  ParamVector theta;
  OptimizerState outer;
  PolicyGradConfig inner;
  int meta_iter = 0;
  int tasks_per_meta_batch = 20;
  MetaGradientMode mode = MetaGradientMode::FirstOrder;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Fresh learner: theta drawn from Rng(seed).substream("init"), Adam outer loop.
MetaLearnerState make_meta_learner(PolicySpec policy, PolicyGradConfig inner, int tasks_per_meta_batch,
                                   double outer_step_size, std::uint64_t seed);

struct MetaLogEntry {
  int meta_iter = 0;
  double pre_adapt_return = 0.0;
  double post_adapt_return = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

using MetaCallback = std::function<void(const MetaLearnerState&, const MetaLogEntry&)>;

/// Raised when theta turns non-finite; carries the last finite state.
class MetaTrainError : public RuntimeFailure {
 public:
  MetaTrainError(const std::string& what, MetaLearnerState last_good)
      : RuntimeFailure(what), last_good_(std::move(last_good)) {}
  const MetaLearnerState& last_good() const { return last_good_; }

 private:
  MetaLearnerState last_good_;
};

/// Runs `meta_iters` iterations. Iteration k draws everything from
/// Rng(seed).substream("meta").substream(k), so training k then resuming to n
/// reproduces a straight run to n.
MetaLearnerState meta_train(const TaskSampler& sampler, const envs::CmpSpec& cmp, MetaLearnerState state,
                            int meta_iters, const MetaCallback& on_iteration = {});

struct AdaptationResult {
  std::vector<ParamVector> thetas;  ///< theta^0 .. theta^N
  std::vector<double> returns;      ///< undiscounted average return after each step
  int rollouts_used = 0;
  int gradient_steps = 0;
};

/// Meta-test protocol: step k (1..n_steps) adapts with
/// rng.substream("adapt").substream(k) and evaluates with
/// rng.substream("eval").substream(k); entry 0 is the unadapted policy.
/// The same path serves meta-learned and random initializations.
AdaptationResult adapt_and_evaluate(const ParamVector& theta, const envs::RewardFn& eval_task,
                                    const envs::CmpSpec& cmp, const PolicySpec& spec, const PolicyGradConfig& cfg,
                                    int n_steps, int eval_rollouts, const Rng& rng);

}  // namespace umrl::meta

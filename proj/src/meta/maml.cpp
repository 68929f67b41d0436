#include "umrl/meta/maml.hpp"

#include <chrono>
#include <cmath>

#include "umrl/numerics/distributions.hpp"
#include "umrl/numerics/error.hpp"
#include "umrl/numerics/parallel.hpp"

namespace umrl::meta {

std::string to_string(MetaGradientMode m) {
  return m == MetaGradientMode::FirstOrder ? "first-order" : "finite-difference-exact";
}

MetaGradientMode parse_meta_gradient_mode(const std::string& s) {
  if (s == "first-order") return MetaGradientMode::FirstOrder;
  if (s == "finite-difference-exact") return MetaGradientMode::FiniteDifferenceExact;
  throw ConfigError("unknown meta-gradient mode '" + s + "'");
}

namespace {

MetaGradient first_order(const ParamVector& theta, std::span<const envs::RewardFn> tasks, const envs::CmpSpec& cmp,
                         const PolicySpec& spec, const PolicyGradConfig& cfg, const Rng& rng) {
  const std::size_t n = tasks.size();
  std::vector<GradientBatch> outer(n);
  std::vector<double> pre(n);
  parallel_for(n, [&](std::size_t i) {
    const Rng task_rng = rng.substream(static_cast<std::uint64_t>(i));
    Rng inner_rng = task_rng.substream("inner");
    const auto inner = estimate_policy_gradient(cmp, spec, theta, tasks[i], cfg, inner_rng);
    pre[i] = inner.mean_return;
    ParamVector adapted = theta;
    adapted.values() += cfg.inner_step_size * inner.gradient.values();
    adapted.require_finite("maml inner step");
    Rng outer_rng = task_rng.substream("outer");
    outer[i] = estimate_policy_gradient(cmp, spec, adapted, tasks[i], cfg, outer_rng);
  });
  MetaGradient mg{ParamVector::zeros_like(theta), 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    mg.gradient.values() += outer[i].gradient.values();
    mg.pre_adapt_return += pre[i];
    mg.post_adapt_return += outer[i].mean_return;
  }
  mg.gradient.values() /= static_cast<double>(n);
  mg.pre_adapt_return /= static_cast<double>(n);
  mg.post_adapt_return /= static_cast<double>(n);
  return mg;
}

}  // namespace

MetaGradient compute_meta_gradient(const ParamVector& theta, std::span<const envs::RewardFn> tasks,
                                   const envs::CmpSpec& cmp, const PolicySpec& spec, const PolicyGradConfig& cfg,
                                   MetaGradientMode mode, const Rng& rng) {
  cfg.validate();
  if (tasks.empty()) throw ConfigError("maml: empty task batch");
  spec.check(theta);
  if (mode == MetaGradientMode::FirstOrder) return first_order(theta, tasks, cmp, spec, cfg, rng);

  if (theta.size() > kMaxFiniteDifferenceParams)
    throw ConfigError("maml: finite-difference-exact mode allows at most " +
                      std::to_string(kMaxFiniteDifferenceParams) + " parameters, policy has " +
                      std::to_string(theta.size()));
  const bool exact = is_enumerable(cmp);
  std::vector<AdaptationModel> models;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const Rng task_rng = rng.substream(static_cast<std::uint64_t>(i));
    models.push_back(exact ? exact_adaptation_model(cmp, spec, tasks[i])
                           : crn_adaptation_model(cmp, spec, tasks[i], cfg, task_rng.substream("inner"),
                                                  task_rng.substream("outer")));
  }
  MetaGradient mg{finite_difference_meta_gradient(theta, models, cfg.inner_step_size), 0.0, 0.0};
  for (const auto& m : models) {
    mg.pre_adapt_return += m.expected_return(theta);
    ParamVector adapted = theta;
    adapted.values() += cfg.inner_step_size * m.inner_gradient(theta).values();
    mg.post_adapt_return += m.expected_return(adapted);
  }
  mg.pre_adapt_return /= static_cast<double>(models.size());
  mg.post_adapt_return /= static_cast<double>(models.size());
  return mg;
}

ParamVector maml_meta_gradient(const ParamVector& theta, std::span<const envs::RewardFn> tasks,
                               const envs::CmpSpec& cmp, const PolicySpec& spec, const PolicyGradConfig& cfg,
                               MetaGradientMode mode, const Rng& rng) {
  return compute_meta_gradient(theta, tasks, cmp, spec, cfg, mode, rng).gradient;
}

ParamVector finite_difference_meta_gradient(const ParamVector& theta, std::span<const AdaptationModel> tasks,
                                            double alpha, double h) {
  if (tasks.empty()) throw ConfigError("finite_difference_meta_gradient: no tasks");
  auto objective = [&](const ParamVector& th) {
    double total = 0.0;
    for (const auto& m : tasks) {
      ParamVector adapted = th;
      adapted.values() += alpha * m.inner_gradient(th).values();
      total += m.expected_return(adapted);
    }
    return total / static_cast<double>(tasks.size());
  };
  ParamVector grad = ParamVector::zeros_like(theta);
  ParamVector probe = theta;
  for (Index j = 0; j < theta.size(); ++j) {
    probe[j] = theta[j] + h;
    const double up = objective(probe);
    probe[j] = theta[j] - h;
    const double down = objective(probe);
    probe[j] = theta[j];
    grad[j] = (up - down) / (2.0 * h);
  }
  return grad;
}

AdaptationModel crn_adaptation_model(const envs::CmpSpec& cmp, const PolicySpec& spec, envs::RewardFn reward,
                                     const PolicyGradConfig& cfg, Rng inner, Rng eval) {
  AdaptationModel m;
  m.inner_gradient = [=](const ParamVector& th) {
    Rng r = inner;
    return policy_gradient_estimate(cmp, spec, th, reward, cfg, r);
  };
  m.expected_return = [=](const ParamVector& th) {
    Rng r = eval;
    const Rng base(r.next_u64());
    const auto pi = policy::bind(spec, th);
    double total = 0.0;
    for (int i = 0; i < cfg.rollouts_per_task; ++i) {
      Rng ri = base.substream(static_cast<std::uint64_t>(i));
      total += envs::discounted_returns(envs::rollout(cmp, pi, reward, ri), cmp.discount)[0];
    }
    return total / cfg.rollouts_per_task;
  };
  return m;
}

bool is_enumerable(const envs::CmpSpec& cmp, double limit) {
  const auto* d = std::get_if<envs::DiscreteActions>(&cmp.actions);
  if (!d || !cmp.deterministic) return false;
  return std::pow(static_cast<double>(d->count), cmp.horizon) <= limit;
}

namespace {

struct Enumeration {
  std::vector<envs::Trajectory> trajectories;
  std::vector<double> probabilities;
};

Enumeration enumerate(const envs::CmpSpec& cmp, const PolicySpec& spec, const ParamVector& theta,
                      const envs::RewardFn& reward) {
  const int count = std::get<envs::DiscreteActions>(cmp.actions).count;
  const int horizon = cmp.horizon;
  Rng unused(0);
  Enumeration out;
  envs::Trajectory cur;
  cur.states.resize(cmp.state_dim, horizon + 1);
  cur.actions.resize(1, horizon);
  cur.log_probs.resize(horizon);
  cur.entropies.resize(horizon);
  cur.rewards = Vector(horizon);
  cur.states.col(0) = cmp.initial_state(unused);

  const Index net_params = spec.net.parameter_count();
  std::function<void(int, double)> visit = [&](int t, double prob) {
    if (t == horizon) {
      out.trajectories.push_back(cur);
      out.probabilities.push_back(prob);
      return;
    }
    const Vector logits =
        mlp_forward_batch<double>(spec.net, theta.values().head(net_params), Vector(cur.states.col(t))).col(0);
    const Categorical<double> dist(logits);
    for (int a = 0; a < count; ++a) {
      const Vector action = Vector::Constant(1, a);
      const Vector next = cmp.dynamics(cur.states.col(t), action, unused);
      cur.actions(0, t) = a;
      cur.log_probs[t] = dist.log_prob(a);
      cur.entropies[t] = dist.entropy();
      cur.states.col(t + 1) = next;
      (*cur.rewards)[t] = reward(next, action);
      visit(t + 1, prob * dist.probs()[a]);
    }
  };
  visit(0, 1.0);
  return out;
}

}  // namespace

AdaptationModel exact_adaptation_model(const envs::CmpSpec& cmp, const PolicySpec& spec, envs::RewardFn reward) {
  if (!is_enumerable(cmp)) throw ConfigError("exact_adaptation_model: cmp '" + cmp.name + "' is not enumerable");
  if (spec.continuous()) throw ConfigError("exact_adaptation_model: needs a discrete policy");
  AdaptationModel m;
  m.inner_gradient = [=](const ParamVector& th) {
    const auto e = enumerate(cmp, spec, th, reward);
    const int horizon = cmp.horizon;
    const auto n = static_cast<Index>(e.trajectories.size());
    Matrix inputs(spec.input_dim(), n * horizon), actions(1, n * horizon);
    Vector weights(n * horizon);
    for (Index i = 0; i < n; ++i) {
      const auto& tr = e.trajectories[static_cast<std::size_t>(i)];
      inputs.middleCols(i * horizon, horizon) = tr.states.leftCols(horizon);
      actions.middleCols(i * horizon, horizon) = tr.actions;
      weights.segment(i * horizon, horizon) =
          e.probabilities[static_cast<std::size_t>(i)] * envs::discounted_returns(tr, cmp.discount);
    }
    return policy::weighted_score(spec, th, inputs, actions, weights);
  };
  m.expected_return = [=](const ParamVector& th) {
    const auto e = enumerate(cmp, spec, th, reward);
    double j = 0.0;
    for (std::size_t i = 0; i < e.trajectories.size(); ++i)
      j += e.probabilities[i] * envs::discounted_returns(e.trajectories[i], cmp.discount)[0];
    return j;
  };
  return m;
}

void MetaLearnerState::validate() const {
  inner.validate();
  policy.check(theta);
  if (tasks_per_meta_batch < 1) throw ConfigError("tasks_per_meta_batch must be >= 1");
  if (mode == MetaGradientMode::FiniteDifferenceExact && theta.size() > kMaxFiniteDifferenceParams)
    throw ConfigError("finite-difference-exact mode allows at most " + std::to_string(kMaxFiniteDifferenceParams) +
                      " parameters");
  theta.require_finite("meta learner theta");
}

MetaLearnerState make_meta_learner(PolicySpec policy, PolicyGradConfig inner, int tasks_per_meta_batch,
                                   double outer_step_size, std::uint64_t seed) {
  MetaLearnerState s;
  Rng init = Rng(seed).substream("init");
  s.theta = policy.init(init);
  s.outer = OptimizerState::make(OptimizerKind::Adam, outer_step_size, s.theta.size());
  s.policy = std::move(policy);
  s.inner = inner;
  s.tasks_per_meta_batch = tasks_per_meta_batch;
  s.seed = seed;
  s.validate();
  return s;
}

MetaLearnerState meta_train(const TaskSampler& sampler, const envs::CmpSpec& cmp, MetaLearnerState state,
                            int meta_iters, const MetaCallback& on_iteration) {
  state.validate();
  if (meta_iters < 0) throw ConfigError("meta_iters must be >= 0");
  for (int k = 0; k < meta_iters; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const Rng iter_rng = Rng(state.seed).substream("meta").substream(static_cast<std::uint64_t>(state.meta_iter));
    Rng task_rng = iter_rng.substream("tasks");
    std::vector<envs::RewardFn> tasks;
    for (int j = 0; j < state.tasks_per_meta_batch; ++j) tasks.push_back(sampler(task_rng));

    const MetaLearnerState last_good = state;
    MetaLogEntry entry;
    try {
      const auto mg = compute_meta_gradient(state.theta, tasks, cmp, state.policy, state.inner, state.mode,
                                            iter_rng.substream("update"));
      state.theta = optimizer_step(state.outer, state.theta, mg.gradient);
      entry.pre_adapt_return = mg.pre_adapt_return;
      entry.post_adapt_return = mg.post_adapt_return;
      entry.grad_norm = mg.gradient.values().norm();
    } catch (const NonFiniteError& e) {
      throw MetaTrainError("meta_train: iteration " + std::to_string(last_good.meta_iter) + ": " + e.what(),
                           last_good);
    }
    entry.meta_iter = state.meta_iter;
    ++state.meta_iter;
    entry.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (on_iteration) on_iteration(state, entry);
  }
  return state;
}

AdaptationResult adapt_and_evaluate(const ParamVector& theta, const envs::RewardFn& eval_task,
                                    const envs::CmpSpec& cmp, const PolicySpec& spec, const PolicyGradConfig& cfg,
                                    int n_steps, int eval_rollouts, const Rng& rng) {
  if (n_steps < 0) throw ConfigError("adapt_and_evaluate: n_steps must be >= 0");
  cfg.validate();
  const Rng adapt_rng = rng.substream("adapt");
  const Rng eval_rng = rng.substream("eval");
  AdaptationResult res;
  ParamVector th = theta;
  for (int k = 0; k <= n_steps; ++k) {
    if (k > 0) {
      Rng r = adapt_rng.substream(static_cast<std::uint64_t>(k));
      th = inner_adapt(th, eval_task, cmp, spec, cfg, r, 1);
      res.rollouts_used += cfg.rollouts_per_task;
      ++res.gradient_steps;
    }
    Rng r = eval_rng.substream(static_cast<std::uint64_t>(k));
    res.returns.push_back(evaluate_return(th, eval_task, cmp, spec, eval_rollouts, r));
    res.rollouts_used += eval_rollouts;
    res.thetas.push_back(th);
  }
  return res;
}

}  // namespace umrl::meta

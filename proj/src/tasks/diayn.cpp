#include "umrl/tasks/diayn.hpp"

#include <cmath>
#include <sstream>

#include "umrl/meta/policy_gradient.hpp"
#include "umrl/numerics/distributions.hpp"
#include "umrl/numerics/error.hpp"

namespace umrl::tasks {

void DiaynConfig::validate() const {
  if (iters < 0) throw ConfigError("diayn.iters must be >= 0");
  if (rollouts_per_iter < 2) throw ConfigError("diayn.rollouts_per_iter must be >= 2");
  if (!(entropy_weight >= 0.0)) throw ConfigError("diayn.entropy_weight must be >= 0");
  if (!(policy_lr > 0.0)) throw ConfigError("diayn.policy_lr must be > 0");
  if (!(disc_lr > 0.0)) throw ConfigError("diayn.disc_lr must be > 0");
  if (eval_episodes_per_skill < 1) throw ConfigError("diayn.eval_episodes_per_skill must be >= 1");
}

nlohmann::json DiaynConfig::to_json() const {
  return {{"iters", iters},
          {"rollouts_per_iter", rollouts_per_iter},
          {"entropy_weight", entropy_weight},
          {"policy_lr", policy_lr},
          {"disc_lr", disc_lr},
          {"seed", seed},
          {"policy_hidden", policy_hidden},
          {"disc_hidden", disc_hidden},
          {"eval_episodes_per_skill", eval_episodes_per_skill}};
}

Vector one_hot(int z, int k) {
  Vector v = Vector::Zero(k);
  v[z] = 1.0;
  return v;
}

void visited_states(std::span<const SkillRollout> batch, Matrix& states, std::vector<int>& labels) {
  if (batch.empty()) throw RuntimeFailure("diayn: empty batch");
  const Index h = batch.front().traj.horizon();
  const Index dim = batch.front().traj.states.rows();
  states.resize(dim, h * static_cast<Index>(batch.size()));
  labels.assign(static_cast<std::size_t>(states.cols()), 0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    states.middleCols(static_cast<Index>(i) * h, h) = batch[i].traj.states.rightCols(h);
    std::fill_n(labels.begin() + static_cast<std::ptrdiff_t>(i * h), h, batch[i].z);
  }
}

namespace {

Matrix batch_log_probs(const TaskDistribution& td, const Matrix& states) {
  Matrix logits = mlp_forward_batch<double>(td.discriminator, td.discriminator_params.values(), states);
  for (Index n = 0; n < logits.cols(); ++n) logits.col(n) = log_softmax<double>(logits.col(n));
  return logits;
}

double mean_log_likelihood(const Matrix& log_probs, const std::vector<int>& labels) {
  double sum = 0.0;
  for (Index n = 0; n < log_probs.cols(); ++n) sum += std::max(log_probs(labels[static_cast<std::size_t>(n)], n), std::log(kLogFloor));
  return sum / static_cast<double>(log_probs.cols());
}

double accuracy_of(const Matrix& log_probs, const std::vector<int>& labels) {
  int hits = 0;
  for (Index n = 0; n < log_probs.cols(); ++n) {
    Index k;
    log_probs.col(n).maxCoeff(&k);
    hits += (k == labels[static_cast<std::size_t>(n)]);
  }
  return static_cast<double>(hits) / static_cast<double>(log_probs.cols());
}

double mean_entropy(std::span<const SkillRollout> batch) {
  double sum = 0.0;
  Index n = 0;
  for (const auto& r : batch) {
    sum += r.traj.entropies.sum();
    n += r.traj.entropies.size();
  }
  return sum / static_cast<double>(n);
}

}  // namespace

DiaynObjectiveTerms diayn_objective_terms(const TaskDistribution& td, std::span<const SkillRollout> batch) {
  Matrix states;
  std::vector<int> labels;
  visited_states(batch, states, labels);
  DiaynObjectiveTerms terms;
  terms.action_entropy = mean_entropy(batch);
  terms.prior_entropy = td.prior_entropy();
  terms.conditional_entropy_bound = -mean_log_likelihood(batch_log_probs(td, states), labels);
  return terms;
}

double pseudo_reward(const TaskDistribution& td, int z, const Vector& state) {
  return task_reward(td, z, state) - td.log_prior(z);
}

double discriminator_log_likelihood(const TaskDistribution& td, std::span<const SkillRollout> batch) {
  Matrix states;
  std::vector<int> labels;
  visited_states(batch, states, labels);
  return mean_log_likelihood(batch_log_probs(td, states), labels);
}

ParamVector discriminator_gradient(const TaskDistribution& td, std::span<const SkillRollout> batch) {
  Matrix states;
  std::vector<int> labels;
  visited_states(batch, states, labels);
  const auto& params = td.discriminator_params.values();
  const auto tape = mlp_forward_tape<double>(td.discriminator, params, states);
  const Matrix& logits = tape.output();
  Matrix out_grad(logits.rows(), logits.cols());
  const double scale = 1.0 / static_cast<double>(logits.cols());
  for (Index n = 0; n < logits.cols(); ++n) {
    Vector g = -softmax<double>(logits.col(n));
    g[labels[static_cast<std::size_t>(n)]] += 1.0;
    out_grad.col(n) = scale * g;
  }
  auto back = mlp_backward_tape<double>(td.discriminator, params, tape, out_grad);
  return ParamVector(td.discriminator_params.layout_ptr(), std::move(back.params));
}

TaskDistribution discriminator_step(const TaskDistribution& td, std::span<const SkillRollout> batch,
                                    OptimizerState& opt) {
  TaskDistribution next = td;
  next.discriminator_params = optimizer_step(opt, td.discriminator_params, discriminator_gradient(td, batch));
  return next;
}

std::vector<SkillRollout> collect_skill_rollouts(const envs::CmpSpec& cmp, const policy::PolicySpec& spec,
                                                 const ParamVector& params, int num_skills, int count, Rng& rng,
                                                 int per_skill) {
  const Rng base(rng.next_u64());
  std::vector<envs::PolicyFn> skills;
  for (int z = 0; z < num_skills; ++z) skills.push_back(policy::bind(spec, params, one_hot(z, num_skills)));
  std::vector<SkillRollout> out;
  out.reserve(static_cast<std::size_t>(count));
  Rng skill_rng = base.substream("skills");
  for (int i = 0; i < count; ++i) {
    const int z = per_skill > 0 ? (i / per_skill) % num_skills
                                : static_cast<int>(skill_rng.index(static_cast<std::uint64_t>(num_skills)));
    Rng r = base.substream(static_cast<std::uint64_t>(i));
    out.push_back({z, envs::rollout(cmp, skills[static_cast<std::size_t>(z)], std::nullopt, r)});
  }
  return out;
}

SkillEvaluation evaluate_skills(const DiaynState& state, const envs::CmpSpec& cmp, int episodes_per_skill, Rng rng) {
  const int k = state.td.num_skills;
  const auto batch = collect_skill_rollouts(cmp, state.policy, state.policy_params, k, k * episodes_per_skill, rng,
                                            episodes_per_skill);
  Matrix states;
  std::vector<int> labels;
  visited_states(batch, states, labels);
  SkillEvaluation e;
  e.accuracy = accuracy_of(batch_log_probs(state.td, states), labels);
  e.terms = diayn_objective_terms(state.td, batch);
  return e;
}

DiaynState make_diayn_state(const envs::CmpSpec& cmp, int num_skills, const DiaynConfig& cfg) {
  cfg.validate();
  if (num_skills < 2) throw ConfigError("diayn: K must be >= 2");
  DiaynState s;
  s.policy = policy::PolicySpec::for_cmp(cmp, cfg.policy_hidden, Activation::Tanh, num_skills);
  Rng init = Rng(cfg.seed).substream("diayn-policy-init");
  s.policy_params = s.policy.init(init);
  s.td = random_discriminator(cmp, num_skills, cfg.seed, cfg.disc_hidden);
  s.td.provenance = Provenance::Diayn;
  s.td.config = cfg.to_json();
  s.entropy_weight = cfg.entropy_weight;
  s.policy_opt = OptimizerState::make(OptimizerKind::Adam, cfg.policy_lr, s.policy_params.size());
  s.disc_opt = OptimizerState::make(OptimizerKind::Adam, cfg.disc_lr, s.td.discriminator_params.size());
  return s;
}

DiaynDiagnostics diayn_iteration(DiaynState& state, const envs::CmpSpec& cmp, const DiaynConfig& cfg) {
  const int k = state.td.num_skills;
  const Rng iter_rng = Rng(cfg.seed).substream("diayn").substream(static_cast<std::uint64_t>(state.iteration));
  Rng collect = iter_rng.substream("collect");
  auto batch = collect_skill_rollouts(cmp, state.policy, state.policy_params, k, cfg.rollouts_per_iter, collect);

  DiaynDiagnostics diag;
  diag.iteration = state.iteration;
  Matrix states;
  std::vector<int> labels;
  visited_states(batch, states, labels);
  diag.disc_accuracy = accuracy_of(batch_log_probs(state.td, states), labels);
  diag.action_entropy = mean_entropy(batch);

  auto fail = [&](const std::string& what) {
    std::ostringstream msg;
    msg << "diayn: non-finite " << what << " at iteration " << state.iteration << " (accuracy " << diag.disc_accuracy
        << ", pseudo-reward " << diag.mean_pseudo_reward << ", entropy " << diag.action_entropy << ")";
    return RuntimeFailure(msg.str());
  };

  try {
    state.td = discriminator_step(state.td, batch, state.disc_opt);
  } catch (const NonFiniteError&) {
    throw fail("discriminator update");
  }

  // Pseudo-rewards from the updated discriminator.
  const Matrix log_d = batch_log_probs(state.td, states);
  const Index h = batch.front().traj.horizon();
  std::vector<envs::Trajectory> trajs;
  std::vector<Vector> latents;
  double reward_sum = 0.0;
  double ll_sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Vector r(h);
    for (Index t = 0; t < h; ++t) {
      const double ll = std::max(log_d(batch[i].z, static_cast<Index>(i) * h + t), std::log(kLogFloor));
      ll_sum += ll;
      r[t] = ll - state.td.log_prior(batch[i].z);
    }
    reward_sum += r.sum();
    batch[i].traj.rewards = std::move(r);
    latents.push_back(one_hot(batch[i].z, k));
    trajs.push_back(std::move(batch[i].traj));
  }
  diag.mean_pseudo_reward = reward_sum / static_cast<double>(h * static_cast<Index>(trajs.size()));
  diag.mi_bound = state.td.prior_entropy() + ll_sum / static_cast<double>(h * static_cast<Index>(trajs.size()));
  if (!std::isfinite(diag.mean_pseudo_reward) || !std::isfinite(diag.mi_bound)) throw fail("pseudo-reward");

  try {
    meta::PolicyGradConfig pg;
    pg.rollouts_per_task = static_cast<int>(trajs.size());
    pg.entropy_bonus = state.entropy_weight;
    const auto gb =
        meta::policy_gradient_from_batch(state.policy, state.policy_params, trajs, cmp.discount, pg, &latents);
    state.policy_params = optimizer_step(state.policy_opt, state.policy_params, gb.gradient);
  } catch (const NonFiniteError&) {
    throw fail("policy update");
  }
  ++state.iteration;
  state.history.push_back(diag);
  return diag;
}

DiaynResult diayn_train(const envs::CmpSpec& cmp, int num_skills, const DiaynConfig& cfg,
                        const DiaynCallback& on_iteration) {
  DiaynState state = make_diayn_state(cmp, num_skills, cfg);
  const Rng eval_rng = Rng(cfg.seed).substream("diayn-eval");
  state.initial_eval = evaluate_skills(state, cmp, cfg.eval_episodes_per_skill, eval_rng.substream("initial"));
  for (int i = 0; i < cfg.iters; ++i) {
    const auto diag = diayn_iteration(state, cmp, cfg);
    if (on_iteration) on_iteration(state, diag);
  }
  state.final_eval = evaluate_skills(state, cmp, cfg.eval_episodes_per_skill, eval_rng.substream("final"));
  state.td.seed = cfg.seed;
  return {state.td, std::move(state)};
}

}  // namespace umrl::tasks

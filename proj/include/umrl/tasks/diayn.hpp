#pragma once

#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "umrl/envs/cmp.hpp"
#include "umrl/numerics/optimizer.hpp"
#include "umrl/policy/mlp_policy.hpp"
#include "umrl/tasks/task_distribution.hpp"

namespace umrl::tasks {

/// Entropy-regularized REINFORCE skill discovery. Each iteration:
///   1. draw z ~ p(z) per rollout and act with pi(a | s, onehot(z));
///   2. one Adam step on the discriminator, maximizing mean log D(z|s) over
///      visited states;
///   3. one Adam step on the policy with pseudo-reward log D(z|s) - log p(z)
///      and entropy bonus entropy_weight * H[pi(.|s,z)].
struct DiaynConfig {
  int iters = 500;
  int rollouts_per_iter = 16;
  double entropy_weight = 0.01;
  double policy_lr = 3e-3;
  double disc_lr = 3e-3;
  std::uint64_t seed = 0;
  std::vector<Index> policy_hidden{64, 64};
  std::vector<Index> disc_hidden{64, 64};
  int eval_episodes_per_skill = 16;

  void validate() const;
  nlohmann::json to_json() const;
};

struct SkillRollout {
  int z = 0;
  envs::Trajectory traj;
};

/// The three entropy terms of the skill objective, estimated from rollouts:
/// mean per-step policy entropy, exact prior entropy, and the discriminator
/// bound -mean log D(z|s) on H[z|s].
struct DiaynObjectiveTerms {
  double action_entropy = 0.0;
  double prior_entropy = 0.0;
  double conditional_entropy_bound = 0.0;

  double mutual_information_bound() const { return prior_entropy - conditional_entropy_bound; }
  double objective() const { return action_entropy + mutual_information_bound(); }
};

struct SkillEvaluation {
  double accuracy = 0.0;  ///< argmax D(.|s) == z over visited states
  DiaynObjectiveTerms terms;
};

struct DiaynDiagnostics {
  int iteration = 0;
  double disc_accuracy = 0.0;
  double mean_pseudo_reward = 0.0;
  double action_entropy = 0.0;
  double mi_bound = 0.0;
};

struct DiaynState {
  policy::PolicySpec policy;  ///< input is state ++ onehot(z)
  ParamVector policy_params;
  TaskDistribution td;
  double entropy_weight = 0.0;
  int iteration = 0;
  OptimizerState policy_opt;
  OptimizerState disc_opt;
  std::vector<DiaynDiagnostics> history;
  SkillEvaluation initial_eval;
  SkillEvaluation final_eval;
};

Vector one_hot(int z, int k);

/// Visited states s_1..s_H of every rollout (one column each) and their skill labels.
void visited_states(std::span<const SkillRollout> batch, Matrix& states, std::vector<int>& labels);

DiaynObjectiveTerms diayn_objective_terms(const TaskDistribution& td, std::span<const SkillRollout> batch);

/// log D(z|s) - log p(z); equals task_reward + ln K under the uniform prior.
double pseudo_reward(const TaskDistribution& td, int z, const Vector& state);

/// Mean log D(z|s) over the visited states of `batch`.
double discriminator_log_likelihood(const TaskDistribution& td, std::span<const SkillRollout> batch);

/// Gradient of discriminator_log_likelihood w.r.t. the discriminator parameters.
ParamVector discriminator_gradient(const TaskDistribution& td, std::span<const SkillRollout> batch);

/// One optimizer step on the discriminator; returns the updated distribution.
TaskDistribution discriminator_step(const TaskDistribution& td, std::span<const SkillRollout> batch,
                                    OptimizerState& opt);

/// Rollouts with skills drawn from p(z) (or every skill `per_skill` times when
/// `per_skill > 0`, in skill order). Reward-free.
std::vector<SkillRollout> collect_skill_rollouts(const envs::CmpSpec& cmp, const policy::PolicySpec& spec,
                                                 const ParamVector& params, int num_skills, int count, Rng& rng,
                                                 int per_skill = 0);

SkillEvaluation evaluate_skills(const DiaynState& state, const envs::CmpSpec& cmp, int episodes_per_skill, Rng rng);

/// Fresh state: policy and discriminator drawn from Rng(seed).
DiaynState make_diayn_state(const envs::CmpSpec& cmp, int num_skills, const DiaynConfig& cfg);

/// One training iteration (collect, discriminator step, policy step).
DiaynDiagnostics diayn_iteration(DiaynState& state, const envs::CmpSpec& cmp, const DiaynConfig& cfg);

struct DiaynResult {
  TaskDistribution td;
  DiaynState state;
};

using DiaynCallback = std::function<void(const DiaynState&, const DiaynDiagnostics&)>;

DiaynResult diayn_train(const envs::CmpSpec& cmp, int num_skills, const DiaynConfig& cfg,
                        const DiaynCallback& on_iteration = {});

}  // namespace umrl::tasks

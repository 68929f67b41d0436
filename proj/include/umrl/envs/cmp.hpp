#pragma once

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <variant>

#include "umrl/numerics/param_vector.hpp"
#include "umrl/numerics/rng.hpp"

namespace umrl::envs {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct DiscreteActions {
  int count = 2;
};

/// Box-bounded continuous actions. Policies act in normalized units: a policy
/// action u maps to low + (u + 1)(high - low)/2, then is clipped to the box.
struct ContinuousActions {
  int dim = 1;
  double low = -1.0;
  double high = 1.0;
};

using ActionSpace = std::variant<DiscreteActions, ContinuousActions>;

/// Length of an action record: 1 (the index) for discrete, `dim` for continuous.
Index action_dim(const ActionSpace& space);
bool is_discrete(const ActionSpace& space);

/// Controlled Markov process: an MDP without a reward.
struct CmpSpec {
  std::string name;
  Index state_dim = 1;
  ActionSpace actions = DiscreteActions{};
  int horizon = 1;
  double discount = 1.0;
  bool deterministic = true;
  std::function<Vector(Rng&)> initial_state;
  /// Transition on environment-unit actions.
  std::function<Vector(const Vector& state, const Vector& env_action, Rng&)> dynamics;

  /// Maps a policy action record to the environment action fed to `dynamics`.
  Vector env_action(const Vector& policy_action) const;
};

/// Reward on (state reached, policy action). Meta-test rewards and r_z are
/// functions of the state only.
using RewardFn = std::function<double(const Vector& state, const Vector& action)>;

struct PolicySample {
  Vector action;
  double log_prob = 0.0;
  double entropy = 0.0;
};

using PolicyFn = std::function<PolicySample(const Vector& state, Rng& rng)>;

/// One fixed-horizon episode. Column t of `states` is s_t (horizon+1 columns);
/// column t of `actions` is the policy action taken at s_t. rewards[t] scores
/// the transition out of s_t, evaluated on s_{t+1}.
struct Trajectory {
  Matrix states;
  Matrix actions;
  Vector log_probs;
  Vector entropies;
  std::optional<Vector> rewards;

  int horizon() const { return static_cast<int>(actions.cols()); }
  bool has_rewards() const { return rewards.has_value(); }
  double total_reward() const;
};

/// Runs one episode. Without a reward the trajectory carries no rewards.
Trajectory rollout(const CmpSpec& cmp, const PolicyFn& policy, const std::optional<RewardFn>& reward, Rng& rng);

/// Attaches rewards to a reward-free trajectory (same convention as rollout).
void attach_rewards(Trajectory& traj, const RewardFn& reward);

/// G_t = sum_{k>=t} gamma^{k-t} r_k.
Vector discounted_returns(const Vector& rewards, double gamma);
Vector discounted_returns(const Trajectory& traj, double gamma);

/// JSON-lines dump, one record per step: {"t","state","action","log_prob","reward"}.
void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj);

// Environments.
CmpSpec point_nav_2d();
CmpSpec velocity_bot_1d();
CmpSpec grid_world_5x5();
/// Single-step bandit: s0 = 0, pulling arm a moves to the one-hot state e_a.
CmpSpec k_armed_bandit(int arms);

/// Looks up one of the named environments above ("bandit" is two-armed).
CmpSpec make_cmp(const std::string& name);

// Grid world helpers; cell (x, y) has index y*5 + x, (0,0) is the lower-left corner.
inline constexpr int kGridSide = 5;
Vector grid_state(int x, int y);
int grid_index(const Vector& state);
/// Occupancy of every cell after `steps` transitions under per-cell action
/// probabilities (cells x actions), pushed through `cmp.dynamics`.
Vector grid_occupancy(const CmpSpec& cmp, const Matrix& action_probs, int steps);

// Evaluation rewards.
RewardFn goal_reach_reward(Vector goal);
RewardFn goal_velocity_reward(double v_goal);
/// 1 whenever the reached state is the given grid cell.
RewardFn grid_goal_reward(int x, int y);
/// Reward equal to the value of the arm whose one-hot state was reached.
RewardFn bandit_reward(Vector arm_values);

}  // namespace umrl::envs

#include "umrl/envs/cmp.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "umrl/numerics/error.hpp"

namespace umrl::envs {

Index action_dim(const ActionSpace& space) {
  return std::visit([](const auto& s) -> Index {
    if constexpr (std::is_same_v<std::decay_t<decltype(s)>, DiscreteActions>)
      return 1;
    else
      return s.dim;
  }, space);
}

bool is_discrete(const ActionSpace& space) { return std::holds_alternative<DiscreteActions>(space); }

Vector CmpSpec::env_action(const Vector& policy_action) const {
  if (const auto* c = std::get_if<ContinuousActions>(&actions)) {
    const double mid = 0.5 * (c->high + c->low), half = 0.5 * (c->high - c->low);
    return (mid + half * policy_action.array()).cwiseMax(c->low).cwiseMin(c->high).matrix();
  }
  return policy_action;
}

double Trajectory::total_reward() const {
  if (!rewards) throw RuntimeFailure("trajectory has no rewards");
  return rewards->sum();
}

namespace {

void require_finite_vector(const Vector& v, const char* what, int t) {
  if (!v.allFinite())
    throw NonFiniteError(std::string("rollout: non-finite ") + what + " at step " + std::to_string(t));
}

}  // namespace

Trajectory rollout(const CmpSpec& cmp, const PolicyFn& policy, const std::optional<RewardFn>& reward, Rng& rng) {
  const int horizon = cmp.horizon;
  const Index adim = action_dim(cmp.actions);
  Trajectory traj;
  traj.states.resize(cmp.state_dim, horizon + 1);
  traj.actions.resize(adim, horizon);
  traj.log_probs.resize(horizon);
  traj.entropies.resize(horizon);
  if (reward) traj.rewards = Vector(horizon);

  Vector s = cmp.initial_state(rng);
  if (s.size() != cmp.state_dim)
    throw DimensionError("rollout: initial state has length " + std::to_string(s.size()));
  require_finite_vector(s, "state", 0);
  traj.states.col(0) = s;
  for (int t = 0; t < horizon; ++t) {
    PolicySample a = policy(s, rng);
    if (a.action.size() != adim)
      throw DimensionError("rollout: policy action has length " + std::to_string(a.action.size()) + ", expected " +
                           std::to_string(adim) + " at step " + std::to_string(t));
    require_finite_vector(a.action, "action", t);
    if (!std::isfinite(a.log_prob)) throw NonFiniteError("rollout: non-finite log-prob at step " + std::to_string(t));
    Vector next = cmp.dynamics(s, cmp.env_action(a.action), rng);
    require_finite_vector(next, "state", t + 1);
    traj.actions.col(t) = a.action;
    traj.log_probs[t] = a.log_prob;
    traj.entropies[t] = a.entropy;
    traj.states.col(t + 1) = next;
    if (reward) {
      const double r = (*reward)(next, a.action);
      if (!std::isfinite(r)) throw NonFiniteError("rollout: non-finite reward at step " + std::to_string(t));
      (*traj.rewards)[t] = r;
    }
    s = std::move(next);
  }
  return traj;
}

void attach_rewards(Trajectory& traj, const RewardFn& reward) {
  Vector r(traj.horizon());
  for (int t = 0; t < traj.horizon(); ++t) r[t] = reward(traj.states.col(t + 1), traj.actions.col(t));
  traj.rewards = std::move(r);
}

Vector discounted_returns(const Vector& rewards, double gamma) {
  Vector g(rewards.size());
  double acc = 0.0;
  for (Index t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    g[t] = acc;
  }
  return g;
}

Vector discounted_returns(const Trajectory& traj, double gamma) {
  if (!traj.rewards) throw RuntimeFailure("discounted_returns: trajectory has no rewards");
  return discounted_returns(*traj.rewards, gamma);
}

void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj) {
  auto as_vec = [](const auto& col) { return std::vector<double>(col.data(), col.data() + col.size()); };
  for (int t = 0; t < traj.horizon(); ++t) {
    nlohmann::json rec{{"t", t},
                       {"state", as_vec(Vector(traj.states.col(t)))},
                       {"action", as_vec(Vector(traj.actions.col(t)))},
                       {"log_prob", traj.log_probs[t]}};
    rec["reward"] = traj.rewards ? nlohmann::json((*traj.rewards)[t]) : nlohmann::json(nullptr);
    out << rec.dump() << '\n';
  }
}

CmpSpec point_nav_2d() {
  CmpSpec c;
  c.name = "point_nav_2d";
  c.state_dim = 2;
  c.actions = ContinuousActions{2, -0.1, 0.1};
  c.horizon = 50;
  c.discount = 0.99;
  c.initial_state = [](Rng&) { return Vector::Zero(2).eval(); };
  c.dynamics = [](const Vector& s, const Vector& a, Rng&) {
    return (s + a.cwiseMax(-0.1).cwiseMin(0.1)).cwiseMax(-2.0).cwiseMin(2.0).eval();
  };
  return c;
}

CmpSpec velocity_bot_1d() {
  CmpSpec c;
  c.name = "velocity_bot_1d";
  c.state_dim = 2;
  c.actions = ContinuousActions{1, -1.0, 1.0};
  c.horizon = 100;
  c.discount = 0.99;
  c.initial_state = [](Rng&) { return Vector::Zero(2).eval(); };
  c.dynamics = [](const Vector& s, const Vector& a, Rng&) {
    const double f = std::clamp(a[0], -1.0, 1.0);
    Vector next(2);
    next[1] = 0.95 * s[1] + 0.1 * f;
    next[0] = s[0] + 0.1 * next[1];
    return next;
  };
  return c;
}

Vector grid_state(int x, int y) {
  Vector s = Vector::Zero(kGridSide * kGridSide);
  s[y * kGridSide + x] = 1.0;
  return s;
}

int grid_index(const Vector& state) {
  Index k;
  state.maxCoeff(&k);
  return static_cast<int>(k);
}

CmpSpec grid_world_5x5() {
  CmpSpec c;
  c.name = "grid_world_5x5";
  c.state_dim = kGridSide * kGridSide;
  c.actions = DiscreteActions{4};
  c.horizon = 10;
  c.discount = 0.9;
  c.initial_state = [](Rng&) { return grid_state(0, 0); };
  c.dynamics = [](const Vector& s, const Vector& a, Rng&) {
    const int k = grid_index(s);
    int x = k % kGridSide, y = k / kGridSide;
    switch (static_cast<int>(a[0])) {
      case 0: y = std::min(y + 1, kGridSide - 1); break;  // N
      case 1: y = std::max(y - 1, 0); break;              // S
      case 2: x = std::min(x + 1, kGridSide - 1); break;  // E
      case 3: x = std::max(x - 1, 0); break;              // W
      default: throw DimensionError("grid_world: action index out of range");
    }
    return grid_state(x, y);
  };
  return c;
}

Vector grid_occupancy(const CmpSpec& cmp, const Matrix& action_probs, int steps) {
  const int cells = kGridSide * kGridSide;
  Rng unused(0);
  Vector d = Vector::Zero(cells);
  d[grid_index(cmp.initial_state(unused))] = 1.0;
  for (int t = 0; t < steps; ++t) {
    Vector next = Vector::Zero(cells);
    for (int s = 0; s < cells; ++s) {
      if (d[s] == 0.0) continue;
      for (Index a = 0; a < action_probs.cols(); ++a) {
        const Vector to = cmp.dynamics(grid_state(s % kGridSide, s / kGridSide), Vector::Constant(1, double(a)), unused);
        next[grid_index(to)] += d[s] * action_probs(s, a);
      }
    }
    d = std::move(next);
  }
  return d;
}

CmpSpec k_armed_bandit(int arms) {
  CmpSpec c;
  c.name = "bandit";
  c.state_dim = arms;
  c.actions = DiscreteActions{arms};
  c.horizon = 1;
  c.discount = 1.0;
  c.initial_state = [arms](Rng&) { return Vector::Zero(arms).eval(); };
  c.dynamics = [arms](const Vector&, const Vector& a, Rng&) {
    Vector s = Vector::Zero(arms);
    s[static_cast<Index>(a[0])] = 1.0;
    return s;
  };
  return c;
}

CmpSpec make_cmp(const std::string& name) {
  if (name == "point_nav_2d") return point_nav_2d();
  if (name == "velocity_bot_1d") return velocity_bot_1d();
  if (name == "grid_world_5x5") return grid_world_5x5();
  if (name == "bandit") return k_armed_bandit(2);
  throw ConfigError("unknown cmp '" + name + "'");
}

RewardFn goal_reach_reward(Vector goal) {
  return [goal = std::move(goal)](const Vector& s, const Vector&) { return -(s.head(goal.size()) - goal).norm(); };
}

RewardFn goal_velocity_reward(double v_goal) {
  return [v_goal](const Vector& s, const Vector&) { return -std::abs(s[1] - v_goal); };
}

RewardFn grid_goal_reward(int x, int y) {
  const int target = y * kGridSide + x;
  return [target](const Vector& s, const Vector&) { return grid_index(s) == target ? 1.0 : 0.0; };
}

RewardFn bandit_reward(Vector arm_values) {
  return [v = std::move(arm_values)](const Vector& s, const Vector&) { return v.dot(s); };
}

}  // namespace umrl::envs

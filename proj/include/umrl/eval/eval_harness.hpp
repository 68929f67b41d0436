#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "umrl/envs/cmp.hpp"
#include "umrl/meta/maml.hpp"
#include "umrl/policy/mlp_policy.hpp"
#include "umrl/tasks/task_distribution.hpp"

namespace umrl::eval {

using envs::Matrix;
using envs::Vector;

enum class Method { UmlDiayn, UmlRandom, Scratch, Handcrafted, HandcraftedMisspecified };

std::string to_string(Method m);
Method parse_method(const std::string& s);
const std::vector<Method>& all_methods();

/// Goal position (PointNav2D) or goal velocity (VelocityBot1D).
struct TaskDescriptor {
  int id = 0;
  Vector goal;

  nlohmann::json to_json() const;
  /// Stable hex digest of the descriptor's canonical JSON.
  std::string hash() const;
};

struct EvalTaskSet {
  std::string cmp_name;
  std::uint64_t seed = 0;
  std::vector<TaskDescriptor> tasks;

  nlohmann::json to_json() const;
  static EvalTaskSet from_json(const nlohmann::json& j);
  /// Digest over all descriptors.
  std::string hash() const;
};

/// Reward for a descriptor on the named CMP.
envs::RewardFn make_reward(const std::string& cmp_name, const TaskDescriptor& task);

/// Goal in the evaluation family ([-2,2]^2 or [-2,2]); the misspecified family
/// draws from the positive quadrant [0,2]^2 or the half range [0,2].
Vector sample_goal(const std::string& cmp_name, Rng& rng, bool misspecified = false);

/// Deterministic in seed: goals come from Rng(seed).substream("eval-tasks").
EvalTaskSet make_eval_tasks(const std::string& cmp_name, int n = 20, std::uint64_t seed = 0);

/// Task sampler for meta-training on the handcrafted (or misspecified) family.
meta::TaskSampler handcrafted_sampler(const std::string& cmp_name, bool misspecified);

/// Meta-test protocol shared by every method.
struct Protocol {
  meta::PolicyGradConfig adapt;
  int n_steps = 25;
  int eval_rollouts = 20;

  void validate() const;
  nlohmann::json to_json() const;
};

struct Aggregate {
  std::vector<double> mean;
  std::vector<double> stderr_;
  int n = 0;
};

/// Mean and standard error (sample sd / sqrt(n)) per step.
Aggregate aggregate(const std::vector<std::vector<double>>& curves);

struct MethodCurve {
  Method method = Method::Scratch;
  std::uint64_t seed = 0;
  std::vector<int> task_ids;
  std::vector<meta::AdaptationResult> per_task;

  std::vector<std::vector<double>> returns() const;
  Aggregate summary() const { return aggregate(returns()); }
};

class MissingCheckpoint : public ConfigError {
 public:
  explicit MissingCheckpoint(Method m)
      : ConfigError("missing checkpoint for method '" + to_string(m) + "'"), method(m) {}
  Method method;
};

/// Every method goes through meta::adapt_and_evaluate with the same protocol
/// and the same per-task stream Rng(seed).substream("meta-test").substream(id);
/// only the initialization differs. Scratch draws a fresh initialization per
/// task from Rng(seed).substream("scratch").substream(id); every other method
/// needs `init`.
MethodCurve run_method(Method method, const envs::CmpSpec& cmp, const policy::PolicySpec& spec,
                       const EvalTaskSet& eval_set, const Protocol& protocol,
                       const std::optional<ParamVector>& init, std::uint64_t seed);

/// Throws unless every curve used the same number of rollouts and gradient
/// steps on every task.
void check_fairness(const std::vector<MethodCurve>& curves);

/// Descriptor hashes of `eval_set` that occur anywhere in `log_text`.
std::vector<std::string> holdout_violations(const EvalTaskSet& eval_set, const std::string& log_text);

/// Columns: method, task_id, seed, step, return.
void write_curves_csv(const std::filesystem::path& path, const std::vector<MethodCurve>& curves);
/// Columns: method, step, mean, stderr, n. Curves of one method are pooled
/// over tasks and seeds.
void write_aggregate_csv(const std::filesystem::path& path, const std::vector<MethodCurve>& curves);

/// Pooled aggregate for one method over all its curves in `curves`.
Aggregate pooled(const std::vector<MethodCurve>& curves, Method method);

struct SkillVisit {
  int skill = 0;
  int episode = 0;
  Matrix states;  ///< s_0 .. s_H, one column each

  Vector final_state() const { return states.col(states.cols() - 1); }
  Vector mean_state() const { return states.rowwise().mean(); }
};

struct VisitationTable {
  std::string cmp_name;
  int num_skills = 0;
  std::vector<SkillVisit> records;  ///< K * episodes_per_skill, skill-major
};

/// Rolls out the skill-conditioned policy (input state ++ onehot(z)) for every
/// skill of `td`.
VisitationTable export_skill_visitations(const tasks::TaskDistribution& td, const envs::CmpSpec& cmp,
                                         const policy::PolicySpec& skill_policy, const ParamVector& skill_params,
                                         int episodes_per_skill, std::uint64_t seed);

/// Trace of the covariance of per-skill mean final states.
double between_skill_variance(const VisitationTable& table);

/// Columns: skill, episode, t, s0, s1, ...
void write_visitation_csv(const std::filesystem::path& path, const VisitationTable& table);
/// Columns: skill, episode, final_s*, mean_s*.
void write_visitation_summary_csv(const std::filesystem::path& path, const VisitationTable& table);

/// Shortest round-trip text for a double.
std::string format_double(double x);

}  // namespace umrl::eval

#include "umrl/eval/eval_harness.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "umrl/numerics/error.hpp"
#include "umrl/numerics/parallel.hpp"
#include "umrl/tasks/diayn.hpp"

namespace umrl::eval {

namespace {

const std::vector<std::pair<Method, std::string>>& method_names() {
  static const std::vector<std::pair<Method, std::string>> names{
      {Method::UmlDiayn, "uml-diayn"},
      {Method::UmlRandom, "uml-random"},
      {Method::Scratch, "scratch"},
      {Method::Handcrafted, "handcrafted"},
      {Method::HandcraftedMisspecified, "handcrafted-misspecified"}};
  return names;
}

std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

bool is_nav(const std::string& cmp_name) { return cmp_name == "point_nav_2d"; }

void require_eval_cmp(const std::string& cmp_name) {
  if (cmp_name != "point_nav_2d" && cmp_name != "velocity_bot_1d")
    throw ConfigError("no evaluation task family for cmp '" + cmp_name + "'");
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  return out;
}

}  // namespace

std::string to_string(Method m) {
  for (const auto& [k, v] : method_names())
    if (k == m) return v;
  return "?";
}

Method parse_method(const std::string& s) {
  for (const auto& [k, v] : method_names())
    if (v == s) return k;
  throw ConfigError("unknown method '" + s + "'");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> all{Method::UmlDiayn, Method::UmlRandom, Method::Scratch, Method::Handcrafted,
                                       Method::HandcraftedMisspecified};
  return all;
}

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

nlohmann::json TaskDescriptor::to_json() const {
  return {{"id", id}, {"goal", std::vector<double>(goal.data(), goal.data() + goal.size())}};
}

std::string TaskDescriptor::hash() const {
  std::string text;
  for (Index i = 0; i < goal.size(); ++i) text += format_double(goal[i]) + ";";
  return hex64(detail::fnv1a(text));
}

nlohmann::json EvalTaskSet::to_json() const {
  nlohmann::json tasks_json = nlohmann::json::array();
  for (const auto& t : tasks) tasks_json.push_back(t.to_json());
  return {{"cmp_name", cmp_name}, {"seed", seed}, {"tasks", tasks_json}};
}

EvalTaskSet EvalTaskSet::from_json(const nlohmann::json& j) {
  EvalTaskSet s;
  s.cmp_name = j.at("cmp_name").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& t : j.at("tasks")) {
    const auto g = t.at("goal").get<std::vector<double>>();
    s.tasks.push_back({t.at("id").get<int>(), Eigen::Map<const Vector>(g.data(), static_cast<Index>(g.size()))});
  }
  return s;
}

std::string EvalTaskSet::hash() const {
  std::string text = cmp_name + "|";
  for (const auto& t : tasks) text += t.hash();
  return hex64(detail::fnv1a(text));
}

envs::RewardFn make_reward(const std::string& cmp_name, const TaskDescriptor& task) {
  require_eval_cmp(cmp_name);
  if (is_nav(cmp_name)) {
    if (task.goal.size() != 2) throw DimensionError("point_nav_2d task needs a 2-D goal");
    return envs::goal_reach_reward(task.goal);
  }
  if (task.goal.size() != 1) throw DimensionError("velocity_bot_1d task needs a scalar goal velocity");
  return envs::goal_velocity_reward(task.goal[0]);
}

Vector sample_goal(const std::string& cmp_name, Rng& rng, bool misspecified) {
  require_eval_cmp(cmp_name);
  const double lo = misspecified ? 0.0 : -2.0;
  const Index dim = is_nav(cmp_name) ? 2 : 1;
  Vector g(dim);
  for (Index i = 0; i < dim; ++i) g[i] = rng.uniform(lo, 2.0);
  return g;
}

EvalTaskSet make_eval_tasks(const std::string& cmp_name, int n, std::uint64_t seed) {
  require_eval_cmp(cmp_name);
  if (n < 1) throw ConfigError("make_eval_tasks: n must be >= 1");
  EvalTaskSet set;
  set.cmp_name = cmp_name;
  set.seed = seed;
  Rng rng = Rng(seed).substream("eval-tasks");
  for (int i = 0; i < n; ++i) set.tasks.push_back({i, sample_goal(cmp_name, rng)});
  return set;
}

meta::TaskSampler handcrafted_sampler(const std::string& cmp_name, bool misspecified) {
  require_eval_cmp(cmp_name);
  return [cmp_name, misspecified](Rng& rng) {
    return make_reward(cmp_name, {0, sample_goal(cmp_name, rng, misspecified)});
  };
}

void Protocol::validate() const {
  adapt.validate();
  if (n_steps < 0) throw ConfigError("eval.n_steps must be >= 0");
  if (eval_rollouts < 1) throw ConfigError("eval.eval_rollouts must be >= 1");
}

nlohmann::json Protocol::to_json() const {
  return {{"inner_step_size", adapt.inner_step_size},
          {"rollouts_per_task", adapt.rollouts_per_task},
          {"baseline", meta::to_string(adapt.baseline)},
          {"entropy_bonus", adapt.entropy_bonus},
          {"normalize_advantages", adapt.normalize_advantages},
          {"n_steps", n_steps},
          {"eval_rollouts", eval_rollouts}};
}

Aggregate aggregate(const std::vector<std::vector<double>>& curves) {
  if (curves.empty()) throw ConfigError("aggregate: no curves");
  const std::size_t len = curves.front().size();
  for (const auto& c : curves)
    if (c.size() != len) throw DimensionError("aggregate: curves differ in length");
  Aggregate a;
  a.n = static_cast<int>(curves.size());
  a.mean.assign(len, 0.0);
  a.stderr_.assign(len, 0.0);
  for (std::size_t k = 0; k < len; ++k) {
    double sum = 0.0;
    for (const auto& c : curves) sum += c[k];
    const double mean = sum / a.n;
    double ss = 0.0;
    for (const auto& c : curves) ss += (c[k] - mean) * (c[k] - mean);
    a.mean[k] = mean;
    a.stderr_[k] = a.n > 1 ? std::sqrt(ss / (a.n - 1)) / std::sqrt(static_cast<double>(a.n)) : 0.0;
  }
  return a;
}

std::vector<std::vector<double>> MethodCurve::returns() const {
  std::vector<std::vector<double>> out;
  out.reserve(per_task.size());
  for (const auto& r : per_task) out.push_back(r.returns);
  return out;
}

MethodCurve run_method(Method method, const envs::CmpSpec& cmp, const policy::PolicySpec& spec,
                       const EvalTaskSet& eval_set, const Protocol& protocol,
                       const std::optional<ParamVector>& init, std::uint64_t seed) {
  protocol.validate();
  if (eval_set.cmp_name != cmp.name)
    throw ConfigError("eval task set is for '" + eval_set.cmp_name + "', not '" + cmp.name + "'");
  if (method != Method::Scratch) {
    if (!init) throw MissingCheckpoint(method);
    spec.check(*init);
  }
  MethodCurve curve;
  curve.method = method;
  curve.seed = seed;
  curve.per_task.resize(eval_set.tasks.size());
  for (const auto& t : eval_set.tasks) curve.task_ids.push_back(t.id);
  const Rng root(seed);
  parallel_for(eval_set.tasks.size(), [&](std::size_t i) {
    const auto& task = eval_set.tasks[i];
    const auto id = static_cast<std::uint64_t>(task.id);
    ParamVector theta;
    if (method == Method::Scratch) {
      Rng r = root.substream("scratch").substream(id);
      theta = spec.init(r);
    } else {
      theta = *init;
    }
    curve.per_task[i] = meta::adapt_and_evaluate(theta, make_reward(cmp.name, task), cmp, spec, protocol.adapt,
                                                 protocol.n_steps, protocol.eval_rollouts,
                                                 root.substream("meta-test").substream(id));
  });
  return curve;
}

void check_fairness(const std::vector<MethodCurve>& curves) {
  if (curves.empty()) return;
  const auto& ref = curves.front().per_task;
  for (const auto& c : curves) {
    if (c.per_task.size() != ref.size())
      throw RuntimeFailure("fairness: " + to_string(c.method) + " ran a different number of tasks");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (c.per_task[i].rollouts_used != ref[i].rollouts_used ||
          c.per_task[i].gradient_steps != ref[i].gradient_steps ||
          c.per_task[i].returns.size() != ref[i].returns.size())
        throw RuntimeFailure("fairness: " + to_string(c.method) + " used a different budget on task " +
                             std::to_string(c.task_ids[i]));
    }
  }
}

std::vector<std::string> holdout_violations(const EvalTaskSet& eval_set, const std::string& log_text) {
  std::vector<std::string> hits;
  for (const auto& t : eval_set.tasks) {
    const auto h = t.hash();
    if (log_text.find(h) != std::string::npos) hits.push_back(h);
  }
  return hits;
}

void write_curves_csv(const std::filesystem::path& path, const std::vector<MethodCurve>& curves) {
  auto out = open_csv(path);
  out << "method,task_id,seed,step,return\n";
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.per_task.size(); ++i)
      for (std::size_t k = 0; k < c.per_task[i].returns.size(); ++k)
        out << to_string(c.method) << ',' << c.task_ids[i] << ',' << c.seed << ',' << k << ','
            << format_double(c.per_task[i].returns[k]) << '\n';
}

Aggregate pooled(const std::vector<MethodCurve>& curves, Method method) {
  std::vector<std::vector<double>> all;
  for (const auto& c : curves)
    if (c.method == method)
      for (const auto& r : c.per_task) all.push_back(r.returns);
  return aggregate(all);
}

void write_aggregate_csv(const std::filesystem::path& path, const std::vector<MethodCurve>& curves) {
  auto out = open_csv(path);
  out << "method,step,mean,stderr,n\n";
  for (Method m : all_methods()) {
    bool present = false;
    for (const auto& c : curves) present = present || c.method == m;
    if (!present) continue;
    const auto a = pooled(curves, m);
    for (std::size_t k = 0; k < a.mean.size(); ++k)
      out << to_string(m) << ',' << k << ',' << format_double(a.mean[k]) << ',' << format_double(a.stderr_[k])
          << ',' << a.n << '\n';
  }
}

VisitationTable export_skill_visitations(const tasks::TaskDistribution& td, const envs::CmpSpec& cmp,
                                         const policy::PolicySpec& skill_policy, const ParamVector& skill_params,
                                         int episodes_per_skill, std::uint64_t seed) {
  if (episodes_per_skill < 1) throw ConfigError("export_skill_visitations: episodes_per_skill must be >= 1");
  if (skill_policy.input_dim() != cmp.state_dim + td.num_skills)
    throw DimensionError("skill policy input must be state ++ onehot(z)");
  skill_policy.check(skill_params);
  VisitationTable table;
  table.cmp_name = cmp.name;
  table.num_skills = td.num_skills;
  const auto total = static_cast<std::size_t>(td.num_skills * episodes_per_skill);
  table.records.resize(total);
  const Rng root = Rng(seed).substream("visitations");
  parallel_for(total, [&](std::size_t i) {
    const int z = static_cast<int>(i) / episodes_per_skill;
    const int ep = static_cast<int>(i) % episodes_per_skill;
    Rng r = root.substream(i);
    const auto pi = policy::bind(skill_policy, skill_params, tasks::one_hot(z, td.num_skills));
    table.records[i] = {z, ep, envs::rollout(cmp, pi, std::nullopt, r).states};
  });
  return table;
}

double between_skill_variance(const VisitationTable& table) {
  if (table.records.empty()) return 0.0;
  const Index dim = table.records.front().states.rows();
  std::map<int, std::pair<Vector, int>> per_skill;
  for (const auto& rec : table.records) {
    auto& [sum, count] = per_skill.try_emplace(rec.skill, Vector::Zero(dim), 0).first->second;
    sum += rec.final_state();
    ++count;
  }
  Matrix centers(dim, static_cast<Index>(per_skill.size()));
  Index j = 0;
  for (const auto& [z, acc] : per_skill) centers.col(j++) = acc.first / acc.second;
  const Vector mu = centers.rowwise().mean();
  return (centers.colwise() - mu).squaredNorm() / static_cast<double>(centers.cols());
}

void write_visitation_csv(const std::filesystem::path& path, const VisitationTable& table) {
  auto out = open_csv(path);
  const Index dim = table.records.empty() ? 0 : table.records.front().states.rows();
  out << "skill,episode,t";
  for (Index d = 0; d < dim; ++d) out << ",s" << d;
  out << '\n';
  for (const auto& rec : table.records)
    for (Index t = 0; t < rec.states.cols(); ++t) {
      out << rec.skill << ',' << rec.episode << ',' << t;
      for (Index d = 0; d < dim; ++d) out << ',' << format_double(rec.states(d, t));
      out << '\n';
    }
}

void write_visitation_summary_csv(const std::filesystem::path& path, const VisitationTable& table) {
  auto out = open_csv(path);
  const Index dim = table.records.empty() ? 0 : table.records.front().states.rows();
  out << "skill,episode";
  for (Index d = 0; d < dim; ++d) out << ",final_s" << d;
  for (Index d = 0; d < dim; ++d) out << ",mean_s" << d;
  out << '\n';
  for (const auto& rec : table.records) {
    out << rec.skill << ',' << rec.episode;
    const Vector f = rec.final_state();
    const Vector m = rec.mean_state();
    for (Index d = 0; d < dim; ++d) out << ',' << format_double(f[d]);
    for (Index d = 0; d < dim; ++d) out << ',' << format_double(m[d]);
    out << '\n';
  }
}

}  // namespace umrl::eval

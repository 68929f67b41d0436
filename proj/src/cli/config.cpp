#include "umrl/cli/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "umrl/numerics/error.hpp"

namespace umrl::cli {

namespace {

using nlohmann::json;

/// Reads the fields of one JSON object, tracking which keys were consumed.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + " must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    bool ok = true;
    if constexpr (std::is_same_v<T, bool>)
      ok = v.is_boolean();
    else if constexpr (std::is_unsigned_v<T>)
      ok = v.is_number_unsigned();
    else if constexpr (std::is_integral_v<T>)
      ok = v.is_number_integer();
    else if constexpr (std::is_floating_point_v<T>)
      ok = v.is_number();
    if (!ok) throw ConfigError(where(key) + " has the wrong type");
    try {
      out = v.get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  template <typename T>
  void get(const std::string& key, T& out, T lo, T hi) {
    get(key, out);
    if (!(out >= lo && out <= hi)) {
      std::ostringstream os;
      os << where(key) << " = " << out << " is outside [" << lo << ", " << hi << "]";
      throw ConfigError(os.str());
    }
  }

  void get_hidden(const std::string& key, std::vector<Index>& out) {
    get(key, out);
    for (Index h : out)
      if (h < 1 || h > 4096) throw ConfigError(where(key) + " entries must be in [1, 4096]");
  }

  template <typename Parse>
  void get_enum(const std::string& key, Parse parse) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_string()) throw ConfigError(where(key) + " must be a string");
    try {
      parse(j_.at(key).get<std::string>());
    } catch (const ConfigError& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown key '" + where(k) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_acquisition(const json& j, AcquisitionConfig& a) {
  Fields f(j, "acquisition");
  f.get_enum("method", [&](const std::string& s) { a.method = tasks::parse_provenance(s); });
  f.get("num_skills", a.num_skills, 2, 256);
  f.get_hidden("disc_hidden", a.disc_hidden);
  f.get("iters", a.iters, 0, 1000000);
  f.get("rollouts_per_iter", a.rollouts_per_iter, 2, 100000);
  f.get("entropy_weight", a.entropy_weight, 0.0, 100.0);
  f.get("policy_lr", a.policy_lr, 1e-12, 10.0);
  f.get("disc_lr", a.disc_lr, 1e-12, 10.0);
  f.get_hidden("skill_policy_hidden", a.skill_policy_hidden);
  f.get("eval_episodes_per_skill", a.eval_episodes_per_skill, 1, 100000);
  f.get("visitation_episodes_per_skill", a.visitation_episodes_per_skill, 1, 100000);
  f.finish();
}

void read_inner(const json& j, InnerConfig& in) {
  Fields f(j, "meta.inner");
  f.get("inner_step_size", in.inner_step_size, 0.0, 100.0);
  f.get("rollouts_per_task", in.rollouts_per_task, 1, 100000);
  f.get_enum("baseline", [&](const std::string& s) { in.baseline = meta::parse_baseline(s); });
  f.get("entropy_bonus", in.entropy_bonus, 0.0, 100.0);
  f.get("normalize_advantages", in.normalize_advantages);
  f.finish();
}

void read_meta(const json& j, MetaConfig& m) {
  Fields f(j, "meta");
  f.get("meta_iters", m.meta_iters, 0, 10000000);
  f.get("tasks_per_meta_batch", m.tasks_per_meta_batch, 1, 100000);
  f.get("outer_step_size", m.outer_step_size, 1e-12, 10.0);
  f.get_enum("mode", [&](const std::string& s) { m.mode = meta::parse_meta_gradient_mode(s); });
  f.get("checkpoint_every", m.checkpoint_every, 0, 10000000);
  if (const json* inner = f.child("inner")) read_inner(*inner, m.inner);
  f.finish();
}

void read_eval(const json& j, EvalConfig& e) {
  Fields f(j, "eval");
  f.get("num_tasks", e.num_tasks, 1, 100000);
  f.get("task_seed", e.task_seed);
  f.get("n_steps", e.n_steps, 0, 100000);
  f.get("eval_rollouts", e.eval_rollouts, 1, 100000);
  if (const json* methods = f.child("methods")) {
    if (!methods->is_array()) throw ConfigError("eval.methods must be an array");
    e.methods.clear();
    for (const auto& m : *methods) {
      if (!m.is_string()) throw ConfigError("eval.methods entries must be strings");
      try {
        e.methods.push_back(eval::parse_method(m.get<std::string>()));
      } catch (const ConfigError& err) {
        throw ConfigError(std::string("eval.methods: ") + err.what());
      }
    }
  }
  f.finish();
}

std::vector<std::string> method_names(const std::vector<eval::Method>& ms) {
  std::vector<std::string> out;
  for (auto m : ms) out.push_back(eval::to_string(m));
  return out;
}

}  // namespace

tasks::DiaynConfig AcquisitionConfig::diayn(std::uint64_t seed) const {
  tasks::DiaynConfig d;
  d.iters = iters;
  d.rollouts_per_iter = rollouts_per_iter;
  d.entropy_weight = entropy_weight;
  d.policy_lr = policy_lr;
  d.disc_lr = disc_lr;
  d.seed = seed;
  d.policy_hidden = skill_policy_hidden;
  d.disc_hidden = disc_hidden;
  d.eval_episodes_per_skill = eval_episodes_per_skill;
  return d;
}

meta::PolicyGradConfig InnerConfig::policy_grad() const {
  meta::PolicyGradConfig c;
  c.inner_step_size = inner_step_size;
  c.rollouts_per_task = rollouts_per_task;
  c.baseline = baseline;
  c.entropy_bonus = entropy_bonus;
  c.normalize_advantages = normalize_advantages;
  return c;
}

void ExperimentConfig::validate() const {
  if (version != kConfigVersion) throw ConfigError("version must be " + std::to_string(kConfigVersion));
  if (cmp_name != "point_nav_2d" && cmp_name != "velocity_bot_1d")
    throw ConfigError("cmp_name must be point_nav_2d or velocity_bot_1d");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (policy_hidden.empty()) throw ConfigError("policy.hidden must not be empty");
  try {
    meta.inner.policy_grad().validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("meta.inner: ") + e.what());
  }
  if (meta.mode == meta::MetaGradientMode::FiniteDifferenceExact) {
    envs::CmpSpec cmp = envs::make_cmp(cmp_name);
    if (policy_spec(cmp).parameter_count() > meta::kMaxFiniteDifferenceParams)
      throw ConfigError("meta.mode finite-difference-exact needs at most " +
                        std::to_string(meta::kMaxFiniteDifferenceParams) + " policy parameters");
  }
  if (eval.methods.empty()) throw ConfigError("eval.methods must not be empty");
}

nlohmann::json ExperimentConfig::to_json() const {
  const auto& a = acquisition;
  const auto& in = meta.inner;
  return {{"version", version},
          {"cmp_name", cmp_name},
          {"seed", seed},
          {"output_dir", output_dir},
          {"policy", {{"hidden", policy_hidden}, {"activation", umrl::to_string(policy_activation)}}},
          {"acquisition",
           {{"method", tasks::to_string(a.method)},
            {"num_skills", a.num_skills},
            {"disc_hidden", a.disc_hidden},
            {"iters", a.iters},
            {"rollouts_per_iter", a.rollouts_per_iter},
            {"entropy_weight", a.entropy_weight},
            {"policy_lr", a.policy_lr},
            {"disc_lr", a.disc_lr},
            {"skill_policy_hidden", a.skill_policy_hidden},
            {"eval_episodes_per_skill", a.eval_episodes_per_skill},
            {"visitation_episodes_per_skill", a.visitation_episodes_per_skill}}},
          {"meta",
           {{"meta_iters", meta.meta_iters},
            {"tasks_per_meta_batch", meta.tasks_per_meta_batch},
            {"outer_step_size", meta.outer_step_size},
            {"mode", meta::to_string(meta.mode)},
            {"checkpoint_every", meta.checkpoint_every},
            {"inner",
             {{"inner_step_size", in.inner_step_size},
              {"rollouts_per_task", in.rollouts_per_task},
              {"baseline", meta::to_string(in.baseline)},
              {"entropy_bonus", in.entropy_bonus},
              {"normalize_advantages", in.normalize_advantages}}}}},
          {"eval",
           {{"num_tasks", eval.num_tasks},
            {"task_seed", eval.task_seed},
            {"n_steps", eval.n_steps},
            {"eval_rollouts", eval.eval_rollouts},
            {"methods", method_names(eval.methods)}}}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  Fields f(j, "");
  int version = -1;
  f.get("version", version);
  if (!j.contains("version")) throw ConfigError("missing required key 'version'");
  if (version != kConfigVersion) throw ConfigError("version must be " + std::to_string(kConfigVersion));
  std::string cmp_name = "point_nav_2d";
  f.get("cmp_name", cmp_name);
  ExperimentConfig c = default_config(cmp_name);
  f.get("seed", c.seed);
  f.get("output_dir", c.output_dir);
  if (const json* p = f.child("policy")) {
    Fields pf(*p, "policy");
    pf.get_hidden("hidden", c.policy_hidden);
    pf.get_enum("activation", [&](const std::string& s) { c.policy_activation = parse_activation(s); });
    pf.finish();
  }
  if (const json* a = f.child("acquisition")) read_acquisition(*a, c.acquisition);
  if (const json* m = f.child("meta")) read_meta(*m, c.meta);
  if (const json* e = f.child("eval")) read_eval(*e, c.eval);
  f.finish();
  c.validate();
  return c;
}

policy::PolicySpec ExperimentConfig::policy_spec(const envs::CmpSpec& cmp) const {
  return policy::PolicySpec::for_cmp(cmp, policy_hidden, policy_activation);
}

eval::Protocol ExperimentConfig::protocol() const {
  eval::Protocol p;
  p.adapt = meta.inner.policy_grad();
  p.n_steps = eval.n_steps;
  p.eval_rollouts = eval.eval_rollouts;
  return p;
}

ExperimentConfig default_config(const std::string& cmp_name) {
  ExperimentConfig c;
  c.cmp_name = cmp_name;
  c.output_dir = "runs/" + cmp_name;
  c.meta.outer_step_size = 2e-3;
  if (cmp_name == "point_nav_2d") c.meta.inner.inner_step_size = 0.01;
  if (cmp_name == "velocity_bot_1d") c.meta.inner.inner_step_size = 0.003;
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

std::string dump_config(const ExperimentConfig& cfg) { return cfg.to_json().dump(2) + "\n"; }

std::string content_hash(const std::string& bytes) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << detail::fnv1a(bytes);
  return os.str();
}

}  // namespace umrl::cli

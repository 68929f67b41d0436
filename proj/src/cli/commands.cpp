#include "umrl/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "umrl/numerics/checkpoint.hpp"
#include "umrl/numerics/error.hpp"

namespace umrl::cli {

namespace {

using nlohmann::json;
using envs::Matrix;
using envs::Vector;

std::string now_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + p.string());
  out << bytes;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string skill_policy_base(tasks::Provenance p) { return "artifacts/skill_policy_" + tasks::to_string(p); }

eval::Method uml_method(tasks::Provenance p) {
  return p == tasks::Provenance::Diayn ? eval::Method::UmlDiayn : eval::Method::UmlRandom;
}

/// Outer optimizer moments stored next to a meta checkpoint.
std::string outer_base(const std::string& base) { return base + "_outer"; }

void save_meta_state(RunDir& run, const std::string& key, const std::string& rel_base,
                     const meta::MetaLearnerState& st, const json& extra) {
  json meta = extra;
  meta["meta_iter"] = st.meta_iter;
  meta["config_hash"] = run.manifest().at("config_hash");
  save_checkpoint(run.path(rel_base), st.theta, meta);
  run.record_checkpoint(key, rel_base);

  auto layout = make_layout({{"first_moment", {st.theta.size()}}, {"second_moment", {st.theta.size()}}});
  Vector moments(2 * st.theta.size());
  if (st.outer.first_moment.size() == st.theta.size()) {
    moments << st.outer.first_moment, st.outer.second_moment;
  } else {
    moments.setZero();
  }
  save_checkpoint(run.path(outer_base(rel_base)), ParamVector(layout, moments),
                  {{"kind", to_string(st.outer.kind)}, {"step", st.outer.step}, {"step_size", st.outer.step_size}});
  run.record_checkpoint(key + "_outer", outer_base(rel_base));
}

meta::MetaLearnerState load_meta_state(const RunDir& run, const std::string& rel_base,
                                       meta::MetaLearnerState fresh) {
  if (!checkpoint_exists(run.path(rel_base)) || !checkpoint_exists(run.path(outer_base(rel_base))))
    throw ConfigError("cannot resume: no checkpoint at " + run.path(rel_base).string());
  auto ck = load_checkpoint(run.path(rel_base));
  if (ck.meta.at("config_hash") != run.manifest().at("config_hash"))
    throw ConfigError("cannot resume: checkpoint was written under a different config");
  fresh.theta = ParamVector(fresh.theta.layout_ptr(), std::move(ck.params.values()));
  fresh.policy.check(fresh.theta);
  fresh.meta_iter = ck.meta.at("meta_iter").get<int>();
  auto outer = load_checkpoint(run.path(outer_base(rel_base)));
  const Index n = fresh.theta.size();
  if (outer.params.size() != 2 * n) throw DimensionError("cannot resume: optimizer state size mismatch");
  fresh.outer.step = outer.meta.at("step").get<std::int64_t>();
  if (fresh.outer.kind == OptimizerKind::Adam) {
    fresh.outer.first_moment = outer.params.values().head(n);
    fresh.outer.second_moment = outer.params.values().tail(n);
  }
  return fresh;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

/// CSV as an array of row objects; numeric cells become numbers.
json csv_to_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::string line;
  std::getline(in, line);
  const auto header = split_csv_line(line);
  json rows = json::array();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    json row = json::object();
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) {
      const std::string& c = cells[i];
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (!c.empty() && end == c.c_str() + c.size())
        row[header[i]] = v;
      else
        row[header[i]] = c;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

// ---------------------------------------------------------------- RunDir

RunDir::RunDir(fs::path root, const ExperimentConfig& cfg) : root_(std::move(root)), cfg_(cfg) {
  cfg_.validate();
  const std::string dumped = dump_config(cfg_);
  fs::create_directories(root_);
  for (const char* sub : {"artifacts", "logs", "curves"}) fs::create_directories(root_ / sub);
  const fs::path cfg_path = root_ / "config.json";
  if (fs::exists(cfg_path)) {
    if (read_file(cfg_path) != dumped)
      throw ConfigError("run directory " + root_.string() + " was created with a different config");
  } else {
    write_file(cfg_path, dumped);
  }
  const fs::path man_path = root_ / "manifest.json";
  if (fs::exists(man_path)) {
    manifest_ = json::parse(read_file(man_path));
  } else {
    manifest_ = {{"created", now_utc()}, {"files", json::object()}, {"stages", json::object()}};
  }
  manifest_["config"] = "config.json";
  manifest_["config_hash"] = content_hash(dumped);
  manifest_["versions"] = {{"umrl", kVersion},
                           {"config", kConfigVersion},
                           {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                         "." + std::to_string(EIGEN_MINOR_VERSION)}};
}

RunDir RunDir::open(const fs::path& root) {
  const fs::path man_path = root / "manifest.json";
  if (!fs::exists(man_path)) throw ConfigError("no manifest.json in " + root.string());
  RunDir run;
  run.root_ = root;
  run.manifest_ = json::parse(read_file(man_path));
  const std::string cfg_bytes = read_file(root / run.manifest_.at("config").get<std::string>());
  if (content_hash(cfg_bytes) != run.manifest_.at("config_hash").get<std::string>())
    throw ConfigError("config.json does not match the manifest's config hash");
  run.cfg_ = ExperimentConfig::from_json(json::parse(cfg_bytes));
  return run;
}

void RunDir::record(const std::string& key, const std::string& rel) { manifest_["files"][key] = rel; }

void RunDir::record_checkpoint(const std::string& key, const std::string& rel_base) {
  record(key + ".bin", rel_base + ".bin");
  record(key + ".json", rel_base + ".json");
}

void RunDir::set_summary(const std::string& stage, json summary) {
  summary["finished"] = now_utc();
  manifest_["stages"][stage] = std::move(summary);
}

void RunDir::write_manifest() {
  for (const auto& [key, rel] : manifest_.at("files").items())
    if (!fs::exists(root_ / rel.get<std::string>()))
      throw RuntimeFailure("manifest entry '" + key + "' points at missing file " + rel.get<std::string>());
  manifest_["updated"] = now_utc();
  write_file(root_ / "manifest.json", manifest_.dump(2) + "\n");
}

std::string task_distribution_base(tasks::Provenance p) {
  return "artifacts/task_distribution_" + tasks::to_string(p);
}

std::string meta_checkpoint_base(eval::Method m) { return "artifacts/meta_" + eval::to_string(m); }

// ---------------------------------------------------------------- acquire

void cmd_acquire(RunDir& run, tasks::Provenance method, std::ostream& log) {
  const auto& cfg = run.config();
  const auto& acq = cfg.acquisition;
  const auto t0 = std::chrono::steady_clock::now();
  const envs::CmpSpec cmp = envs::make_cmp(cfg.cmp_name);
  const std::string prov = tasks::to_string(method);

  tasks::TaskDistribution td;
  policy::PolicySpec skill_spec;
  ParamVector skill_params;
  json summary{{"provenance", prov}, {"K", acq.num_skills}, {"cmp_name", cfg.cmp_name}};

  if (method == tasks::Provenance::Random) {
    td = tasks::random_discriminator(cmp, acq.num_skills, cfg.seed, acq.disc_hidden);
    td.config = {{"disc_hidden", acq.disc_hidden}};
    // Untrained skill policy: the visitation export then shows a random-policy control.
    auto state = tasks::make_diayn_state(cmp, acq.num_skills, acq.diayn(cfg.seed));
    skill_spec = state.policy;
    skill_params = state.policy_params;
  } else {
    const std::string log_rel = "logs/acquire_diayn.csv";
    std::ofstream csv(run.path(log_rel), std::ios::binary);
    csv << "iteration,disc_accuracy,mean_pseudo_reward,action_entropy,mi_bound\n";
    const auto result = tasks::diayn_train(cmp, acq.num_skills, acq.diayn(cfg.seed),
                                           [&](const tasks::DiaynState&, const tasks::DiaynDiagnostics& d) {
                                             csv << d.iteration << ',' << eval::format_double(d.disc_accuracy) << ','
                                                 << eval::format_double(d.mean_pseudo_reward) << ','
                                                 << eval::format_double(d.action_entropy) << ','
                                                 << eval::format_double(d.mi_bound) << '\n';
                                           });
    csv.close();
    run.record("acquire_diayn_log", log_rel);
    td = result.td;
    skill_spec = result.state.policy;
    skill_params = result.state.policy_params;
    summary["discriminator_accuracy"] = result.state.final_eval.accuracy;
    summary["discriminator_accuracy_initial"] = result.state.initial_eval.accuracy;
    summary["mi_bound_initial"] = result.state.initial_eval.terms.mutual_information_bound();
    summary["mi_bound_final"] = result.state.final_eval.terms.mutual_information_bound();
    log << "diayn: held-out accuracy " << result.state.final_eval.accuracy << ", MI bound "
        << result.state.initial_eval.terms.mutual_information_bound() << " -> "
        << result.state.final_eval.terms.mutual_information_bound() << "\n";
  }

  tasks::save_task_distribution(run.path(task_distribution_base(method)), td);
  run.record_checkpoint("task_distribution_" + prov, task_distribution_base(method));
  save_checkpoint(run.path(skill_policy_base(method)), skill_params,
                  {{"hidden", acq.skill_policy_hidden}, {"num_skills", acq.num_skills}, {"cmp_name", cfg.cmp_name},
                   {"trained", method == tasks::Provenance::Diayn}});
  run.record_checkpoint("skill_policy_" + prov, skill_policy_base(method));

  const auto table = eval::export_skill_visitations(td, cmp, skill_spec, skill_params,
                                                    acq.visitation_episodes_per_skill, cfg.seed);
  const std::string vis = "curves/visitations_" + prov + ".csv";
  const std::string vis_sum = "curves/visitation_summary_" + prov + ".csv";
  eval::write_visitation_csv(run.path(vis), table);
  eval::write_visitation_summary_csv(run.path(vis_sum), table);
  run.record("visitations_" + prov, vis);
  run.record("visitation_summary_" + prov, vis_sum);

  Matrix visited(cmp.state_dim, 0);
  for (const auto& rec : table.records) {
    visited.conservativeResize(Eigen::NoChange, visited.cols() + rec.states.cols() - 1);
    visited.rightCols(rec.states.cols() - 1) = rec.states.rightCols(rec.states.cols() - 1);
  }
  const auto coverage = tasks::argmax_coverage(td, visited);
  int uncovered = 0;
  for (int c : coverage) uncovered += (c == 0);
  if (uncovered > 0)
    log << "warning: " << uncovered << " of " << acq.num_skills
        << " skills are never the discriminator's argmax on visited states\n";
  summary["coverage"] = coverage;
  summary["between_skill_variance"] = eval::between_skill_variance(table);
  summary["wall_s"] = seconds_since(t0);
  run.set_summary("acquire_" + prov, summary);
  run.write_manifest();
}

// ---------------------------------------------------------------- meta-train

void cmd_meta_train(RunDir& run, const MetaTrainOptions& opts, std::ostream& log) {
  const auto& cfg = run.config();
  const envs::CmpSpec cmp = envs::make_cmp(cfg.cmp_name);
  const eval::Method method = opts.method.value_or(uml_method(cfg.acquisition.method));
  if (method == eval::Method::Scratch) throw ConfigError("scratch has no meta-training stage");
  const std::string name = eval::to_string(method);

  // Training-task descriptors, one per sampled task, logged for the hold-out check.
  std::vector<std::string> descriptors;
  meta::TaskSampler sampler;
  json provenance;
  std::shared_ptr<tasks::TaskDistribution> td;
  if (method == eval::Method::UmlDiayn || method == eval::Method::UmlRandom) {
    const auto prov = method == eval::Method::UmlDiayn ? tasks::Provenance::Diayn : tasks::Provenance::Random;
    const fs::path base = opts.task_distribution.value_or(run.path(task_distribution_base(prov)));
    if (!checkpoint_exists(base)) throw ConfigError("task distribution not found at " + base.string());
    td = std::make_shared<tasks::TaskDistribution>(tasks::load_task_distribution(base));
    if (td->cmp_name != cfg.cmp_name)
      throw ConfigError("task distribution was acquired on '" + td->cmp_name + "', config uses '" + cfg.cmp_name +
                        "'");
    if (td->discriminator.input_dim != cmp.state_dim)
      throw ConfigError("task distribution state dimension does not match " + cfg.cmp_name);
    if (td->provenance != prov)
      throw ConfigError("method " + name + " needs a " + tasks::to_string(prov) + " task distribution, got " +
                        tasks::to_string(td->provenance));
    provenance = {{"source", tasks::to_string(td->provenance)}, {"K", td->num_skills}, {"seed", td->seed}};
    sampler = [td, &descriptors](Rng& r) {
      auto t = tasks::sample_task(*td, r);
      descriptors.push_back("skill:" + std::to_string(t.z));
      return t.reward;
    };
  } else {
    const bool mis = method == eval::Method::HandcraftedMisspecified;
    provenance = {{"source", mis ? "handcrafted-misspecified" : "handcrafted"}};
    sampler = [&cfg, mis, &descriptors](Rng& r) {
      const eval::TaskDescriptor d{0, eval::sample_goal(cfg.cmp_name, r, mis)};
      descriptors.push_back(d.hash());
      return eval::make_reward(cfg.cmp_name, d);
    };
  }

  const auto spec = cfg.policy_spec(cmp);
  auto state = meta::make_meta_learner(spec, cfg.meta.inner.policy_grad(), cfg.meta.tasks_per_meta_batch,
                                       cfg.meta.outer_step_size, cfg.seed);
  state.mode = cfg.meta.mode;
  const std::string base = meta_checkpoint_base(method);
  if (opts.resume) state = load_meta_state(run, base, std::move(state));
  const int target = opts.until.value_or(cfg.meta.meta_iters);
  if (target < state.meta_iter)
    throw ConfigError("checkpoint is already at meta-iteration " + std::to_string(state.meta_iter) +
                      ", past the requested " + std::to_string(target));

  const std::string log_rel = "logs/meta_train_" + name + ".csv";
  const std::string tasks_rel = "logs/meta_tasks_" + name + ".csv";
  const auto mode = opts.resume ? std::ios::binary | std::ios::app : std::ios::binary | std::ios::trunc;
  std::ofstream csv(run.path(log_rel), mode);
  std::ofstream tasks_csv(run.path(tasks_rel), mode);
  if (!opts.resume) {
    csv << "meta_iter,pre_adapt_return,post_adapt_return,grad_norm,wall_ms\n";
    tasks_csv << "meta_iter,task,descriptor\n";
  }
  run.record("meta_train_log_" + name, log_rel);
  run.record("meta_tasks_log_" + name, tasks_rel);
  const json extra{{"method", name}, {"cmp_name", cfg.cmp_name}, {"td_provenance", provenance}};

  if (!opts.resume) save_meta_state(run, "meta_" + name + "_iter0", base + "_iter0", state, extra);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    state = meta::meta_train(sampler, cmp, state, target - state.meta_iter,
                             [&](const meta::MetaLearnerState& st, const meta::MetaLogEntry& e) {
                               csv << e.meta_iter << ',' << eval::format_double(e.pre_adapt_return) << ','
                                   << eval::format_double(e.post_adapt_return) << ','
                                   << eval::format_double(e.grad_norm) << ',' << eval::format_double(e.wall_ms)
                                   << '\n';
                               for (std::size_t j = 0; j < descriptors.size(); ++j)
                                 tasks_csv << e.meta_iter << ',' << j << ',' << descriptors[j] << '\n';
                               descriptors.clear();
                               if (cfg.meta.checkpoint_every > 0 && st.meta_iter % cfg.meta.checkpoint_every == 0) {
                                 const std::string k = std::to_string(st.meta_iter);
                                 save_meta_state(run, "meta_" + name + "_iter" + k, base + "_iter" + k, st, extra);
                               }
                               if (e.meta_iter % 25 == 0)
                                 log << name << " iter " << e.meta_iter << " pre " << e.pre_adapt_return << " post "
                                     << e.post_adapt_return << "\n";
                             });
  } catch (const meta::MetaTrainError& e) {
    csv.close();
    tasks_csv.close();
    save_meta_state(run, "meta_" + name, base, e.last_good(), extra);
    run.write_manifest();
    throw;
  }
  csv.close();
  tasks_csv.close();
  save_meta_state(run, "meta_" + name, base, state, extra);
  run.set_summary("meta_train_" + name, {{"meta_iter", state.meta_iter}, {"wall_s", seconds_since(t0)}});
  run.write_manifest();
}

// ---------------------------------------------------------------- evaluate

void cmd_evaluate(RunDir& run, const std::map<std::string, fs::path>& checkpoints, std::ostream& log) {
  const auto& cfg = run.config();
  const envs::CmpSpec cmp = envs::make_cmp(cfg.cmp_name);
  const auto spec = cfg.policy_spec(cmp);
  for (const auto& [m, p] : checkpoints) eval::parse_method(m);

  // Resolve every checkpoint before any work so a missing one fails fast.
  std::map<eval::Method, ParamVector> inits;
  for (eval::Method m : cfg.eval.methods) {
    if (m == eval::Method::Scratch) continue;
    const auto it = checkpoints.find(eval::to_string(m));
    const fs::path base = it != checkpoints.end() ? it->second : run.path(meta_checkpoint_base(m));
    if (!checkpoint_exists(base)) throw eval::MissingCheckpoint(m);
    auto ck = load_checkpoint(base);
    ParamVector theta(spec.layout(), std::move(ck.params.values()));
    spec.check(theta);
    inits.emplace(m, std::move(theta));
  }

  const auto eval_set = eval::make_eval_tasks(cfg.cmp_name, cfg.eval.num_tasks, cfg.eval.task_seed);
  const std::string tasks_rel = "artifacts/eval_tasks.json";
  write_file(run.path(tasks_rel), eval_set.to_json().dump(2) + "\n");
  run.record("eval_tasks", tasks_rel);

  std::string training_logs;
  for (const auto& [key, rel] : run.manifest().at("files").items())
    if (key.rfind("meta_tasks_log_", 0) == 0) training_logs += read_file(run.path(rel.get<std::string>()));
  const auto leaks = eval::holdout_violations(eval_set, training_logs);
  if (!leaks.empty()) throw RuntimeFailure("hold-out violated: eval task " + leaks.front() + " seen in meta-training");

  const auto protocol = cfg.protocol();
  std::vector<eval::MethodCurve> curves;
  json budget = json::object();
  for (eval::Method m : cfg.eval.methods) {
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<ParamVector> init;
    if (auto it = inits.find(m); it != inits.end()) init = it->second;
    curves.push_back(eval::run_method(m, cmp, spec, eval_set, protocol, init, cfg.seed));
    json per_task = json::array();
    for (const auto& r : curves.back().per_task)
      per_task.push_back({{"rollouts", r.rollouts_used}, {"gradient_steps", r.gradient_steps}});
    budget[eval::to_string(m)] = per_task;
    const auto agg = curves.back().summary();
    log << eval::to_string(m) << ": step0 " << agg.mean.front() << " final " << agg.mean.back() << " ("
        << seconds_since(t0) << " s)\n";
  }
  eval::check_fairness(curves);

  const std::string curves_rel = "curves/curves.csv";
  const std::string agg_rel = "curves/aggregate.csv";
  const std::string budget_rel = "logs/eval_budget.json";
  eval::write_curves_csv(run.path(curves_rel), curves);
  eval::write_aggregate_csv(run.path(agg_rel), curves);
  write_file(run.path(budget_rel), budget.dump(2) + "\n");
  run.record("curves", curves_rel);
  run.record("aggregate", agg_rel);
  run.record("eval_budget", budget_rel);
  run.set_summary("evaluate", {{"eval_task_set_hash", eval_set.hash()},
                               {"protocol", protocol.to_json()},
                               {"fairness", "identical rollouts and gradient steps per task"},
                               {"holdout", "no eval descriptor in meta-training logs"}});
  run.write_manifest();
}

// ---------------------------------------------------------------- report

void cmd_report(RunDir& run, std::ostream& log) {
  const json& files = run.manifest().at("files");
  json bundle{{"config_hash", run.manifest().at("config_hash")}, {"cmp_name", run.config().cmp_name}};
  json visitations = json::object();
  for (const auto& [key, rel] : files.items()) {
    const fs::path p = run.path(rel.get<std::string>());
    if (key == "curves") bundle["curves"] = csv_to_json(p);
    if (key == "aggregate") bundle["aggregate"] = csv_to_json(p);
    if (key == "eval_tasks") bundle["eval_tasks"] = json::parse(read_file(p));
    if (key.rfind("visitation_summary_", 0) == 0) visitations[key.substr(19)] = csv_to_json(p);
  }
  bundle["visitations"] = visitations;
  bundle["sources"] = files;
  const std::string rel = "report.json";
  write_file(run.path(rel), bundle.dump(2) + "\n");
  run.record("report", rel);
  run.write_manifest();
  log << "wrote " << run.path(rel).string() << "\n";
}

void cmd_run(RunDir& run, std::ostream& log) {
  const auto& methods = run.config().eval.methods;
  auto wants = [&](eval::Method m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  if (wants(eval::Method::UmlDiayn)) cmd_acquire(run, tasks::Provenance::Diayn, log);
  if (wants(eval::Method::UmlRandom)) cmd_acquire(run, tasks::Provenance::Random, log);
  for (eval::Method m : methods) {
    if (m == eval::Method::Scratch) continue;
    MetaTrainOptions opts;
    opts.method = m;
    cmd_meta_train(run, opts, log);
  }
  cmd_evaluate(run, {}, log);
  cmd_report(run, log);
}

// ---------------------------------------------------------------- entry point

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unsupervised meta-reinforcement learning pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", config_path, "experiment config (JSON)");
    if (config_required) opt->required();
    sub->add_option("--out", out_dir, "run directory (default: config output_dir)");
    sub->add_option("--seed", seed, "override the config seed");
  };

  auto* acquire = app.add_subcommand("acquire", "acquire a task distribution");
  add_common(acquire, true);
  std::string acquire_method;
  acquire->add_option("--method", acquire_method, "random or diayn (default: config)");

  auto* meta_train = app.add_subcommand("meta-train", "meta-train an initialization");
  add_common(meta_train, true);
  std::string mt_method;
  std::string mt_tasks;
  std::optional<int> mt_until;
  bool mt_resume = false;
  meta_train->add_option("--method", mt_method, "uml-diayn, uml-random, handcrafted or handcrafted-misspecified");
  meta_train->add_option("--tasks", mt_tasks, "task distribution checkpoint base");
  meta_train->add_option("--until", mt_until, "stop at this meta-iteration (default: meta.meta_iters)");
  meta_train->add_flag("--resume", mt_resume, "continue from the method's latest checkpoint");

  auto* evaluate = app.add_subcommand("evaluate", "adaptation curves for every method");
  add_common(evaluate, true);
  std::vector<std::string> ck_args;
  evaluate->add_option("--checkpoint", ck_args, "method=checkpoint_base (repeatable)");

  auto* report = app.add_subcommand("report", "consolidate plot data");
  add_common(report, false);

  auto* run_all = app.add_subcommand("run", "acquire, meta-train, evaluate and report");
  add_common(run_all, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitConfig;
  }

  try {
    if (report->parsed()) {
      fs::path dir = out_dir;
      if (dir.empty()) {
        if (config_path.empty()) throw ConfigError("report needs --out or --config");
        dir = load_config(config_path).output_dir;
      }
      RunDir run = RunDir::open(dir);
      cmd_report(run, out);
      return kExitOk;
    }
    ExperimentConfig cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    RunDir run(cfg.output_dir, cfg);
    if (acquire->parsed()) {
      cmd_acquire(run, acquire_method.empty() ? cfg.acquisition.method : tasks::parse_provenance(acquire_method),
                  out);
    } else if (meta_train->parsed()) {
      MetaTrainOptions opts;
      if (!mt_method.empty()) opts.method = eval::parse_method(mt_method);
      if (!mt_tasks.empty()) opts.task_distribution = mt_tasks;
      opts.until = mt_until;
      opts.resume = mt_resume;
      cmd_meta_train(run, opts, out);
    } else if (evaluate->parsed()) {
      std::map<std::string, fs::path> cks;
      for (const auto& a : ck_args) {
        const auto eq = a.find('=');
        if (eq == std::string::npos) throw ConfigError("--checkpoint expects method=path, got '" + a + "'");
        cks[a.substr(0, eq)] = a.substr(eq + 1);
      }
      cmd_evaluate(run, cks, out);
    } else if (run_all->parsed()) {
      cmd_run(run, out);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace umrl::cli

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "umrl/eval/eval_harness.hpp"
#include "umrl/meta/maml.hpp"
#include "umrl/tasks/diayn.hpp"

namespace umrl::cli {

inline constexpr int kConfigVersion = 1;

struct AcquisitionConfig {
  tasks::Provenance method = tasks::Provenance::Diayn;
  int num_skills = 8;
  std::vector<Index> disc_hidden{32, 32};
  int iters = 500;
  int rollouts_per_iter = 16;
  double entropy_weight = 0.01;
  double policy_lr = 3e-3;
  double disc_lr = 3e-3;
  std::vector<Index> skill_policy_hidden{32, 32};
  int eval_episodes_per_skill = 16;
  int visitation_episodes_per_skill = 8;

  tasks::DiaynConfig diayn(std::uint64_t seed) const;
  bool operator==(const AcquisitionConfig&) const = default;
};

struct InnerConfig {
  double inner_step_size = 0.1;
  int rollouts_per_task = 20;
  meta::Baseline baseline = meta::Baseline::PerTimestepMean;
  double entropy_bonus = 0.0;
  bool normalize_advantages = false;

  meta::PolicyGradConfig policy_grad() const;
  bool operator==(const InnerConfig&) const = default;
};

struct MetaConfig {
  int meta_iters = 300;
  int tasks_per_meta_batch = 20;
  double outer_step_size = 1e-3;
  meta::MetaGradientMode mode = meta::MetaGradientMode::FirstOrder;
  int checkpoint_every = 50;
  InnerConfig inner;

  bool operator==(const MetaConfig&) const = default;
};

struct EvalConfig {
  int num_tasks = 20;
  std::uint64_t task_seed = 1000;
  int n_steps = 25;
  int eval_rollouts = 20;
  std::vector<eval::Method> methods = eval::all_methods();

  bool operator==(const EvalConfig&) const = default;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::string cmp_name = "point_nav_2d";
  std::uint64_t seed = 0;
  std::string output_dir = "run";
  std::vector<Index> policy_hidden{32, 32};
  Activation policy_activation = Activation::Tanh;
  AcquisitionConfig acquisition;
  MetaConfig meta;
  EvalConfig eval;

  /// Range checks; throws ConfigError naming the field.
  void validate() const;
  nlohmann::json to_json() const;
  /// Strict: every key known, every value in range.
  static ExperimentConfig from_json(const nlohmann::json& j);

  policy::PolicySpec policy_spec(const envs::CmpSpec& cmp) const;
  eval::Protocol protocol() const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Per-environment defaults used by `umrl init`-style examples and tests.
ExperimentConfig default_config(const std::string& cmp_name);

ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical serialization (sorted keys, 2-space indent, trailing newline).
std::string dump_config(const ExperimentConfig& cfg);

/// Hex FNV-1a digest of the given bytes.
std::string content_hash(const std::string& bytes);

}  // namespace umrl::cli

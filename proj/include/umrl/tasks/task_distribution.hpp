#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "umrl/envs/cmp.hpp"
#include "umrl/numerics/mlp.hpp"
#include "umrl/numerics/param_vector.hpp"

namespace umrl::tasks {

using envs::Matrix;
using envs::Vector;

enum class Provenance { Random, Diayn };

std::string to_string(Provenance p);
Provenance parse_provenance(const std::string& s);

/// Latent prior p(z) (uniform categorical) plus a discriminator D(z|s) over K
/// skills. Task z rewards r_z(s) = log D(z|s).
struct TaskDistribution {
  int num_skills = 8;
  MlpSpec discriminator;
  ParamVector discriminator_params;
  Provenance provenance = Provenance::Random;
  std::string cmp_name;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();

  double log_prior(int /*z*/) const { return -std::log(static_cast<double>(num_skills)); }
  double prior_entropy() const { return std::log(static_cast<double>(num_skills)); }
  void validate() const;
};

MlpSpec discriminator_spec(Index state_dim, int num_skills, std::vector<Index> hidden = {64, 64});

/// log D(.|s) for one state.
Vector discriminator_log_probs(const TaskDistribution& td, const Vector& state);
/// D(.|s) for one state; sums to one.
Vector discriminator_probs(const TaskDistribution& td, const Vector& state);

/// Frozen randomly initialized discriminator (provenance random). Empty argmax
/// regions are allowed; see argmax_coverage.
TaskDistribution random_discriminator(const envs::CmpSpec& cmp, int num_skills, std::uint64_t seed,
                                      std::vector<Index> hidden = {64, 64});

/// Number of states in `states` (one per column) whose argmax skill is z, per z.
std::vector<int> argmax_coverage(const TaskDistribution& td, const Matrix& states);

/// log(max(D(z|s), 1e-12)); always <= 0.
double task_reward(const TaskDistribution& td, int z, const Vector& state);

struct SampledTask {
  int z = 0;
  envs::RewardFn reward;
};

/// z ~ p(z) and s -> task_reward(td, z, s).
SampledTask sample_task(const TaskDistribution& td, Rng& rng);

/// Saved as a numerics checkpoint; the sidecar adds
/// {"K","prior","provenance","cmp_name","seed","config","spec"}.
void save_task_distribution(const std::filesystem::path& base, const TaskDistribution& td);
TaskDistribution load_task_distribution(const std::filesystem::path& base);

nlohmann::json mlp_spec_to_json(const MlpSpec& spec);
MlpSpec mlp_spec_from_json(const nlohmann::json& j);

}  // namespace umrl::tasks

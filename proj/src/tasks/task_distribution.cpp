#include "umrl/tasks/task_distribution.hpp"

#include <cmath>

#include "umrl/numerics/checkpoint.hpp"
#include "umrl/numerics/distributions.hpp"
#include "umrl/numerics/error.hpp"

namespace umrl::tasks {

std::string to_string(Provenance p) { return p == Provenance::Random ? "random" : "diayn"; }

Provenance parse_provenance(const std::string& s) {
  if (s == "random") return Provenance::Random;
  if (s == "diayn") return Provenance::Diayn;
  throw ConfigError("unknown provenance '" + s + "'");
}

void TaskDistribution::validate() const {
  if (num_skills < 2) throw ConfigError("task distribution needs K >= 2 skills");
  if (discriminator.output_dim != num_skills) throw DimensionError("discriminator output dim != K");
  if (discriminator_params.size() != discriminator.parameter_count())
    throw DimensionError("discriminator parameters do not match their spec");
}

MlpSpec discriminator_spec(Index state_dim, int num_skills, std::vector<Index> hidden) {
  MlpSpec s;
  s.input_dim = state_dim;
  s.hidden_dims = std::move(hidden);
  s.output_dim = num_skills;
  s.validate();
  return s;
}

Vector discriminator_log_probs(const TaskDistribution& td, const Vector& state) {
  return log_softmax<double>(mlp_forward(td.discriminator, td.discriminator_params, state));
}

Vector discriminator_probs(const TaskDistribution& td, const Vector& state) {
  return softmax<double>(mlp_forward(td.discriminator, td.discriminator_params, state));
}

TaskDistribution random_discriminator(const envs::CmpSpec& cmp, int num_skills, std::uint64_t seed,
                                      std::vector<Index> hidden) {
  if (num_skills < 2) throw ConfigError("random_discriminator: K must be >= 2");
  TaskDistribution td;
  td.num_skills = num_skills;
  td.discriminator = discriminator_spec(cmp.state_dim, num_skills, std::move(hidden));
  Rng rng = Rng(seed).substream("discriminator");
  td.discriminator_params = mlp_init(td.discriminator, rng);
  td.provenance = Provenance::Random;
  td.cmp_name = cmp.name;
  td.seed = seed;
  return td;
}

std::vector<int> argmax_coverage(const TaskDistribution& td, const Matrix& states) {
  const Matrix logits = mlp_forward_batch<double>(td.discriminator, td.discriminator_params.values(), states);
  std::vector<int> counts(static_cast<std::size_t>(td.num_skills), 0);
  for (Index n = 0; n < logits.cols(); ++n) {
    Index k;
    logits.col(n).maxCoeff(&k);
    ++counts[static_cast<std::size_t>(k)];
  }
  return counts;
}

double task_reward(const TaskDistribution& td, int z, const Vector& state) {
  if (z < 0 || z >= td.num_skills) throw DimensionError("task_reward: skill index out of range");
  return safe_log(discriminator_probs(td, state)[z]);
}

SampledTask sample_task(const TaskDistribution& td, Rng& rng) {
  const int z = static_cast<int>(rng.index(static_cast<std::uint64_t>(td.num_skills)));
  // Copy so the reward stays valid after `td` goes away.
  auto shared = std::make_shared<const TaskDistribution>(td);
  return {z, [shared, z](const Vector& s, const Vector&) { return task_reward(*shared, z, s); }};
}

nlohmann::json mlp_spec_to_json(const MlpSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden_dims", spec.hidden_dims},
          {"output_dim", spec.output_dim},
          {"activation", to_string(spec.activation)}};
}

MlpSpec mlp_spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.input_dim = j.at("input_dim").get<Index>();
  s.hidden_dims = j.at("hidden_dims").get<std::vector<Index>>();
  s.output_dim = j.at("output_dim").get<Index>();
  s.activation = parse_activation(j.at("activation").get<std::string>());
  s.validate();
  return s;
}

void save_task_distribution(const std::filesystem::path& base, const TaskDistribution& td) {
  td.validate();
  nlohmann::json meta{{"K", td.num_skills},
                      {"prior", "uniform"},
                      {"provenance", to_string(td.provenance)},
                      {"cmp_name", td.cmp_name},
                      {"seed", td.seed},
                      {"config", td.config},
                      {"spec", mlp_spec_to_json(td.discriminator)}};
  save_checkpoint(base, td.discriminator_params, std::move(meta));
}

TaskDistribution load_task_distribution(const std::filesystem::path& base) {
  auto ck = load_checkpoint(base);
  TaskDistribution td;
  td.num_skills = ck.meta.at("K").get<int>();
  if (ck.meta.at("prior").get<std::string>() != "uniform") throw ConfigError("only uniform priors are supported");
  td.provenance = parse_provenance(ck.meta.at("provenance").get<std::string>());
  td.cmp_name = ck.meta.at("cmp_name").get<std::string>();
  td.seed = ck.meta.at("seed").get<std::uint64_t>();
  td.config = ck.meta.value("config", nlohmann::json::object());
  td.discriminator = mlp_spec_from_json(ck.meta.at("spec"));
  td.discriminator_params = ParamVector(td.discriminator.layout(), std::move(ck.params.values()));
  td.validate();
  return td;
}

}  // namespace umrl::tasks

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "umrl/cli/config.hpp"

namespace umrl::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

inline constexpr const char* kVersion = "0.1.0";

/// Run directory: config.json, manifest.json, artifacts/, logs/, curves/.
/// Every file written through a RunDir is recorded in the manifest.
class RunDir {
 public:
  /// Creates the directory if needed. Refuses a directory whose config.json
  /// differs from `cfg`.
  RunDir(fs::path root, const ExperimentConfig& cfg);
  /// Opens an existing run for reading; throws ConfigError without a manifest.
  static RunDir open(const fs::path& root);

  const fs::path& root() const { return root_; }
  const ExperimentConfig& config() const { return cfg_; }
  fs::path path(const std::string& rel) const { return root_ / rel; }

  /// Records a written file (path relative to the root) under `key`.
  void record(const std::string& key, const std::string& rel);
  /// Records both files of a checkpoint base.
  void record_checkpoint(const std::string& key, const std::string& rel_base);
  void set_summary(const std::string& stage, nlohmann::json summary);
  /// Writes manifest.json after checking every recorded file exists.
  void write_manifest();

  const nlohmann::json& manifest() const { return manifest_; }

 private:
  RunDir() = default;
  fs::path root_;
  ExperimentConfig cfg_;
  nlohmann::json manifest_;
};

/// Saved skill-discovery or random task distribution under artifacts/.
std::string task_distribution_base(tasks::Provenance p);
/// Meta-learned initialization for a method under artifacts/.
std::string meta_checkpoint_base(eval::Method m);

void cmd_acquire(RunDir& run, tasks::Provenance method, std::ostream& log);

struct MetaTrainOptions {
  std::optional<eval::Method> method;        ///< default: uml-<acquisition.method>
  std::optional<fs::path> task_distribution; ///< overrides the run's artifact
  std::optional<int> until;                  ///< stop at this meta-iteration
  bool resume = false;
};

void cmd_meta_train(RunDir& run, const MetaTrainOptions& opts, std::ostream& log);

/// `checkpoints` maps method names to checkpoint bases; others default to the
/// run's artifacts.
void cmd_evaluate(RunDir& run, const std::map<std::string, fs::path>& checkpoints, std::ostream& log);

/// Writes report.json (curves, aggregates, visitations, eval tasks).
void cmd_report(RunDir& run, std::ostream& log);

/// acquire (both provenances) -> meta-train every requested method -> evaluate -> report.
void cmd_run(RunDir& run, std::ostream& log);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace umrl::cli

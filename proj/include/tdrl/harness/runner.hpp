#pragma once

#include "tdrl/harness/config.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace tdrl::harness {

/// Bumped whenever executor output for an unchanged config would change.
inline constexpr const char* kArtifactVersion = "tdrl-artifact-1";

using Series = std::vector<std::pair<double, double>>;  // (step, value)

/// One cell's record. The wall-clock timestamp lives in a sidecar file
/// (timestamp.txt) so that reruns produce byte-identical manifests.
struct RunManifest {
  std::string run_id;
  std::string module;
  std::uint64_t seed = 0;
  std::string artifact_version = kArtifactVersion;
  Json config;
  std::string status = "ok";  // ok | failed | numeric_abort
  std::string error;
  std::map<std::string, Series> metrics;
  Json summary = Json::object();
  std::vector<std::string> files;  // relative to the run directory

  Json to_json() const;
  static RunManifest from_json(const Json& j);
  bool ok() const { return status == "ok"; }
};

std::uint64_t fnv1a64(std::string_view bytes);
/// Hash of the canonical config (out_dir excluded) and the artifact version.
std::string run_id(const ExperimentConfig& cfg);
/// <out_dir>/<module>-<run_id>
std::filesystem::path run_directory(const ExperimentConfig& cfg);

inline constexpr const char* kManifestName = "manifest.json";
void write_manifest(const std::filesystem::path& dir, const RunManifest& m);
/// Accepts a manifest file or a run directory.
RunManifest load_manifest(const std::filesystem::path& path);
/// Manifest files under the given files or directories (recursive), sorted.
std::vector<std::filesystem::path> find_manifests(const std::vector<std::filesystem::path>& roots);

class RunExistsError : public ContractError {
public:
  using ContractError::ContractError;
};

using LogFn = std::function<void(const std::string&)>;

struct RunOptions {
  int jobs = 1;  // > 1 runs cells in forked worker processes
  bool force = false;
  LogFn log;
};

struct RunOutcome {
  std::vector<std::filesystem::path> dirs;
  std::vector<RunManifest> manifests;  // in cell order
  int failed() const;
  bool numeric_abort() const;
};

/// Expands the sweep and executes every cell. Refuses (RunExistsError) if
/// any cell directory already holds a manifest, unless forced. A failing
/// cell is recorded in its manifest and the remaining cells still run.
RunOutcome run(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Executes one cell into `dir` and returns its manifest (also written).
RunManifest execute_cell(const ExperimentConfig& cell, const std::filesystem::path& dir);

/// The stage-2 tradeoff grid of a profile as a dqn-module sweep.
ExperimentConfig tradeoff_config(const dqn::TradeoffProfile& p, const std::filesystem::path& out_dir);
/// Rows for judge_tradeoff, read back from dqn-module manifests.
std::vector<dqn::TradeoffRow> tradeoff_rows(const std::vector<RunManifest>& manifests);

}  // namespace tdrl::harness

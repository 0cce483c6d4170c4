#pragma once

#include "tdrl/abstraction/abstraction.hpp"
#include "tdrl/dg/dg.hpp"
#include "tdrl/dqn/dqn.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tdrl::harness {

using Json = nlohmann::json;

/// Unknown key, wrong type, or unparsable override.
class ConfigError : public ContractError {
public:
  using ContractError::ContractError;
};

struct KeyDoc {
  std::string path;  // dotted
  std::string doc;
};

/// The complete default document. Every leaf is a valid key.
const Json& default_config();
/// One line of documentation per leaf key, in document order.
const std::vector<KeyDoc>& key_docs();
/// Dotted paths of every leaf in the defaults.
std::vector<std::string> leaf_paths();

std::size_t levenshtein(const std::string& a, const std::string& b);
/// Up to `limit` valid paths closest to `key` by edit distance.
std::vector<std::string> nearest_keys(const std::string& key, std::size_t limit = 3);

/// A fully resolved configuration: defaults overlaid with a user document,
/// then environment and command-line overrides.
class ExperimentConfig {
public:
  ExperimentConfig();
  explicit ExperimentConfig(Json doc);

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string serialize() const;

  /// key=value with a dotted key; the value is read as JSON, else as a string.
  void set(const std::string& path, const std::string& value);
  void set_json(const std::string& path, const Json& value);
  /// Applies every ARTIFACT_<PATH> variable, e.g. ARTIFACT_ABSTRACTION_CODEBOOK_SIZE=50.
  void apply_env(const std::map<std::string, std::string>& env);

  const Json& get(const std::string& path) const;
  const Json& doc() const { return doc_; }

  std::string module() const { return doc_.at("module").get<std::string>(); }
  std::uint64_t seed() const { return doc_.at("seed").get<std::uint64_t>(); }

  /// Sweep axes as dotted path -> values; empty when nothing is swept.
  std::map<std::string, std::vector<Json>> sweep_axes() const;
  /// One config per grid cell (axes in sorted key order, last axis fastest),
  /// each with the sweep block emptied.
  std::vector<ExperimentConfig> expand() const;

  gridworld::GridConfig grid() const;
  gridworld::EpisodeConfig episode() const;
  abstraction::AbstractionConfig abstraction() const;
  dqn::DqnConfig dqn() const;
  dg::DgConfig dg() const;
  dg::GeneratorConfig generator() const;

  bool operator==(const ExperimentConfig& o) const { return doc_ == o.doc_; }

private:
  void validate_against_defaults(const Json& doc, const Json& defaults, const std::string& prefix) const;
  Json doc_;
};

/// Environment variables with the ARTIFACT_ prefix from the process environment.
std::map<std::string, std::string> artifact_env();

}  // namespace tdrl::harness

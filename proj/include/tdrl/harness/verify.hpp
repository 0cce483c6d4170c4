#pragma once

#include "tdrl/harness/runner.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace tdrl::harness {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  Json data = Json::object();
  double seconds = 0.0;  // not part of the report, which must be reproducible
};

struct SuiteReport {
  std::string suite;
  std::string fault;
  std::vector<CheckResult> checks;
  std::vector<std::string> artifacts;  // relative to the output directory

  bool pass() const;
  const CheckResult* find(const std::string& name) const;
  std::vector<std::string> failures() const;
  Json to_json() const;
};

struct VerifyOptions {
  std::filesystem::path out_dir = "verify";
  std::string scale = "ci";  // rl suite: ci | full
  /// Deliberate defect for negative controls: "" or "sinkhorn-sign-flip".
  std::string fault;
  int jobs = 1;
  LogFn log;
};

const std::vector<std::string>& suite_names();
const std::vector<std::string>& fault_names();

/// Runs one suite, writes <out_dir>/<suite>/report.json plus side artifacts.
SuiteReport verify(const std::string& suite, const VerifyOptions& opts = {});

}  // namespace tdrl::harness

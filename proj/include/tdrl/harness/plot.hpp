#pragma once

#include "tdrl/harness/runner.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace tdrl::harness {

struct PlotSpec {
  std::string metric;
  std::string group_by;  // dotted config path; empty puts every run in one group
  std::string x_axis;    // dotted config path; empty plots the metric against its steps
  std::string title;
};

/// Mean and sample standard deviation over the runs sharing (group, step).
struct AggregateRow {
  std::string group;
  double step = 0.0;
  double mean = 0.0;
  double std = 0.0;
  int n = 0;
};

/// Requested metric absent from a manifest; the message lists what is there.
class MetricMissingError : public ContractError {
public:
  using ContractError::ContractError;
};

/// Metric names a manifest can be plotted by: time series plus numeric
/// summary entries (the latter as a single point at step 0).
std::vector<std::string> available_metrics(const RunManifest& m);

/// Failed runs are skipped. With x_axis set, each run contributes the last
/// value of its series at x = its config value.
std::vector<AggregateRow> aggregate(const std::vector<RunManifest>& runs, const PlotSpec& spec);

void write_aggregate_csv(const std::filesystem::path& path, const std::vector<AggregateRow>& rows);
/// One line per group; a +-1 std band wherever more than one run contributes.
std::string render_svg(const std::vector<AggregateRow>& rows, const PlotSpec& spec);

struct PlotFiles {
  std::filesystem::path csv;
  std::filesystem::path svg;
};

/// Writes <prefix>.csv and <prefix>.svg.
PlotFiles plot(const std::vector<RunManifest>& runs, const PlotSpec& spec, const std::filesystem::path& prefix);

}  // namespace tdrl::harness

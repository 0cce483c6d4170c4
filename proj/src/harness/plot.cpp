#include "tdrl/harness/plot.hpp"

#include "tdrl/core/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace tdrl::harness {

namespace {

Json::json_pointer pointer(const std::string& path) {
  std::string ptr = "/" + path;
  std::replace(ptr.begin(), ptr.end(), '.', '/');
  return Json::json_pointer(ptr);
}

const Json& config_value(const RunManifest& m, const std::string& path) {
  const auto ptr = pointer(path);
  if (!m.config.contains(ptr)) throw ConfigError("run " + m.run_id + " has no config key '" + path + "'");
  return m.config.at(ptr);
}

std::string label(const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

Series series_of(const RunManifest& m, const std::string& metric) {
  if (auto it = m.metrics.find(metric); it != m.metrics.end() && !it->second.empty()) return it->second;
  if (m.summary.contains(metric) && m.summary.at(metric).is_number()) return {{0.0, m.summary.at(metric).get<double>()}};
  std::string names;
  for (const auto& n : available_metrics(m)) names += (names.empty() ? "" : ", ") + n;
  throw MetricMissingError("metric '" + metric + "' not found in run " + m.run_id + "; available: " + names);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::vector<std::string> available_metrics(const RunManifest& m) {
  std::vector<std::string> out;
  for (const auto& [name, s] : m.metrics)
    if (!s.empty()) out.push_back(name);
  for (const auto& [name, v] : m.summary.items())
    if (v.is_number() && !m.metrics.count(name)) out.push_back(name);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<AggregateRow> aggregate(const std::vector<RunManifest>& runs, const PlotSpec& spec) {
  if (spec.metric.empty()) throw ContractError("plot: no metric given");
  // Keyed by the raw JSON value so numeric groups sort numerically.
  std::map<Json, std::map<double, std::vector<double>>> cells;
  int used = 0;
  for (const auto& m : runs) {
    if (!m.ok()) continue;
    const Json group = spec.group_by.empty() ? Json("all") : config_value(m, spec.group_by);
    const Series s = series_of(m, spec.metric);
    if (spec.x_axis.empty()) {
      for (const auto& [step, v] : s) cells[group][step].push_back(v);
    } else {
      const Json& x = config_value(m, spec.x_axis);
      if (!x.is_number()) throw ContractError("plot: x axis '" + spec.x_axis + "' is not numeric");
      cells[group][x.get<double>()].push_back(s.back().second);
    }
    ++used;
  }
  if (used == 0) throw ContractError("plot: no completed runs to aggregate");
  std::vector<AggregateRow> rows;
  for (const auto& [group, steps] : cells) {
    for (const auto& [step, values] : steps) {
      rows.push_back({label(group), step, stats::mean(values), stats::stddev(values), static_cast<int>(values.size())});
    }
  }
  return rows;
}

void write_aggregate_csv(const std::filesystem::path& path, const std::vector<AggregateRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "group,step,mean,std,n\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%d\n", r.step, r.mean, r.std, r.n);
    out << r.group << buf;
  }
}

std::string render_svg(const std::vector<AggregateRow>& rows, const PlotSpec& spec) {
  constexpr double W = 720, H = 440, left = 70, right = 160, top = 40, bottom = 50;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& r : rows) {
    x0 = std::min(x0, r.step);
    x1 = std::max(x1, r.step);
    y0 = std::min(y0, r.mean - r.std);
    y1 = std::max(y1, r.mean + r.std);
  }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
  auto py = [&](double y) { return H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"24\" font-size=\"14\">" << (spec.title.empty() ? spec.metric : spec.title) << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4, yv = y0 + (y1 - y0) * t / 4;
    s << "<text x=\"" << px(xv) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
  }
  s << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
    << (spec.x_axis.empty() ? "step" : spec.x_axis) << "</text>\n";

  std::vector<std::string> groups;
  for (const auto& r : rows)
    if (std::find(groups.begin(), groups.end(), r.group) == groups.end()) groups.push_back(r.group);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    std::vector<const AggregateRow*> pts;
    for (const auto& r : rows)
      if (r.group == groups[gi]) pts.push_back(&r);
    const char* color = colors[gi % std::size(colors)];
    const bool band = std::any_of(pts.begin(), pts.end(), [](const AggregateRow* r) { return r->n > 1; });
    if (band) {
      s << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (const auto* r : pts) s << px(r->step) << "," << py(r->mean + r->std) << " ";
      for (auto it = pts.rbegin(); it != pts.rend(); ++it) s << px((*it)->step) << "," << py((*it)->mean - (*it)->std) << " ";
      s << "\"/>\n";
    }
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto* r : pts) s << px(r->step) << "," << py(r->mean) << " ";
    s << "\"/>\n";
    if (pts.size() == 1) s << "<circle cx=\"" << px(pts[0]->step) << "\" cy=\"" << py(pts[0]->mean) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = top + 18.0 * static_cast<double>(gi);
    s << "<line x1=\"" << W - right + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - right + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W - right + 38 << "\" y=\"" << ly + 4 << "\">"
      << (spec.group_by.empty() ? "" : spec.group_by + "=") << groups[gi] << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

PlotFiles plot(const std::vector<RunManifest>& runs, const PlotSpec& spec, const std::filesystem::path& prefix) {
  const auto rows = aggregate(runs, spec);
  PlotFiles f{prefix, prefix};
  f.csv += ".csv";
  f.svg += ".svg";
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  write_aggregate_csv(f.csv, rows);
  std::ofstream out(f.svg);
  if (!out) throw std::runtime_error("cannot write " + f.svg.string());
  out << render_svg(rows, spec);
  return f;
}

}  // namespace tdrl::harness

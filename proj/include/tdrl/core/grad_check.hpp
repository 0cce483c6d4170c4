#pragma once

#include "tdrl/core/graph.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace tdrl {

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  bool pass() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
  }
  double max_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_relative_error);
    return m;
  }
};

/// Builds the loss on a fresh graph from the current parameter values.
template <typename Scalar>
using LossBuilder = std::function<Var<Scalar>(Graph<Scalar>&)>;

/// Compare backward() against central differences. The error for a parameter
/// tensor is max_k |analytic_k - numeric_k| / max(|analytic|_inf, |numeric|_inf),
/// i.e. entrywise deviation relative to the tensor's gradient scale. Frozen
/// parameters are not perturbed and report zero on both sides.
template <typename Scalar>
GradCheckReport grad_check(const LossBuilder<Scalar>& build, const ParameterList<Scalar>& params,
                           double tolerance, double step = 1e-3) {
  if (tolerance <= 0.0) throw ContractError("grad_check: tolerance must be positive");
  GradCheckReport report;
  report.tolerance = tolerance;

  GradientMap<Scalar> analytic;
  {
    Graph<Scalar> g;
    analytic = g.backward(build(g));
  }
  auto evaluate = [&]() {
    Graph<Scalar> g;
    return static_cast<double>(build(g).value()(0, 0));
  };

  for (auto* p : params) {
    GradCheckEntry entry;
    entry.name = p->name;
    if (!p->trainable) {
      const Tensor<Scalar> a = analytic.of(*p);
      entry.max_abs_analytic = a.size() ? static_cast<double>(a.cwiseAbs().maxCoeff()) : 0.0;
      entry.pass = entry.max_abs_analytic == 0.0;
      report.entries.push_back(entry);
      continue;
    }
    const Tensor<Scalar> a = analytic.of(*p);
    Tensor<Scalar> numeric(a.rows(), a.cols());
    for (Eigen::Index k = 0; k < p->value.size(); ++k) {
      Scalar& w = p->value.data()[k];
      const Scalar saved = w;
      w = saved + static_cast<Scalar>(step);
      const double up = evaluate();
      w = saved - static_cast<Scalar>(step);
      const double down = evaluate();
      w = saved;
      numeric.data()[k] = static_cast<Scalar>((up - down) / (2.0 * step));
    }
    double worst = 0.0;
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      worst = std::max(worst, std::abs(static_cast<double>(a.data()[k] - numeric.data()[k])));
    }
    entry.max_abs_analytic = a.size() ? static_cast<double>(a.cwiseAbs().maxCoeff()) : 0.0;
    entry.max_abs_numeric = numeric.size() ? static_cast<double>(numeric.cwiseAbs().maxCoeff()) : 0.0;
    const double scale = std::max(entry.max_abs_analytic, entry.max_abs_numeric);
    entry.max_relative_error = scale > 1e-12 ? worst / scale : worst;
    entry.pass = entry.max_relative_error < tolerance;
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace tdrl

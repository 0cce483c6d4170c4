#include "tdrl/ot/sinkhorn.hpp"

#include <cmath>
#include <limits>

namespace tdrl::ot {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kAbsorbAbove = 1e30;

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

// f_i = eps log a_i - eps log sum_j exp((g_j - C_ij) / eps)
void log_update_rows(const Vectord& a, const Tensord& cost, const Vectord& g, double eps, Vectord& f) {
  for (Eigen::Index i = 0; i < cost.rows(); ++i) {
    if (a(i) <= 0.0) {
      f(i) = kNegInf;
      continue;
    }
    const auto e = ((g.transpose().array() - cost.row(i).array()) / eps).eval();
    const double mx = e.maxCoeff();
    f(i) = eps * std::log(a(i)) - eps * (mx + std::log((e - mx).exp().sum()));
  }
}

void log_update_cols(const Vectord& b, const Tensord& cost, const Vectord& f, double eps, Vectord& g) {
  for (Eigen::Index j = 0; j < cost.cols(); ++j) {
    if (b(j) <= 0.0) {
      g(j) = kNegInf;
      continue;
    }
    const auto e = ((f.array() - cost.col(j).array()) / eps).eval();
    const double mx = e.maxCoeff();
    g(j) = eps * std::log(b(j)) - eps * (mx + std::log((e - mx).exp().sum()));
  }
}

Tensord kernel(const Vectord& f, const Vectord& g, const Tensord& cost, double eps) {
  Tensord k = -cost;
  k.colwise() += f;
  k.rowwise() += g.transpose();
  return (k.array() / eps).exp().matrix();
}

void absorb(Vectord& pot, const Vectord& scaling, double eps) {
  for (Eigen::Index i = 0; i < pot.size(); ++i) {
    if (std::isfinite(pot(i))) pot(i) += eps * safe_log(scaling(i));
  }
}

struct StageOutcome {
  int iterations = 0;
  bool converged = false;
};

// Scaling iterations at fixed epsilon, warm-started from potentials (f, g).
StageOutcome run_stage(const Vectord& a, const Vectord& b, const Tensord& cost, double eps, int max_iters, double tol,
                       Vectord& f, Vectord& g) {
  const Eigen::Index n = a.size();
  const Eigen::Index m = b.size();
  StageOutcome r;
  log_update_rows(a, cost, g, eps, f);
  log_update_cols(b, cost, f, eps, g);

  Vectord u = Vectord::Ones(n);
  Vectord v = Vectord::Ones(m);
  Tensord k = kernel(f, g, cost, eps);
  while (r.iterations < max_iters) {
    const Vectord ktu = k.transpose() * u;
    bool underflow = false;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (b(j) <= 0.0) {
        v(j) = 0.0;
      } else if (ktu(j) > 0.0) {
        v(j) = b(j) / ktu(j);
      } else {
        underflow = true;
      }
    }
    const Vectord kv = k * v;
    for (Eigen::Index i = 0; i < n && !underflow; ++i) {
      if (a(i) <= 0.0) {
        u(i) = 0.0;
      } else if (kv(i) > 0.0) {
        u(i) = a(i) / kv(i);
      } else {
        underflow = true;
      }
    }
    ++r.iterations;

    if (underflow || !u.allFinite() || !v.allFinite()) {
      // Kernel too small to scale: fall back to one exact log-domain sweep.
      log_update_rows(a, cost, g, eps, f);
      log_update_cols(b, cost, f, eps, g);
      u.setOnes();
      v.setOnes();
      k = kernel(f, g, cost, eps);
      continue;
    }
    if (u.maxCoeff() > kAbsorbAbove || v.maxCoeff() > kAbsorbAbove || u.minCoeff() < 1.0 / kAbsorbAbove ||
        v.minCoeff() < 1.0 / kAbsorbAbove) {
      absorb(f, u, eps);
      absorb(g, v, eps);
      u.setOnes();
      v.setOnes();
      k = kernel(f, g, cost, eps);
    }
    if (r.iterations % 10 == 0 || r.iterations == max_iters) {
      const double err = (v.array() * (k.transpose() * u).array() - b.array()).abs().sum();
      if (err < tol) {
        r.converged = true;
        break;
      }
    }
  }

  absorb(f, u, eps);
  absorb(g, v, eps);
  return r;
}

}  // namespace

double default_epsilon(const Tensord& cost, double factor) {
  return std::max(factor * cost.mean(), 1e-8);
}

SinkhornResult sinkhorn(const Vectord& a, const Vectord& b, const Tensord& cost, const SinkhornOptions& opts) {
  if (!(opts.epsilon > 0.0)) throw ContractError("sinkhorn: epsilon must be positive");
  if (opts.max_iters < 1) throw ContractError("sinkhorn: max_iters must be positive");
  if (cost.rows() != a.size() || cost.cols() != b.size()) {
    throw DimensionError("sinkhorn: cost " + shape_of(cost) + " for marginals of size " + std::to_string(a.size()) +
                         ", " + std::to_string(b.size()));
  }
  require_finite(cost, "cost matrix");
  const double eps = opts.epsilon;
  const Eigen::Index n = a.size();
  const Eigen::Index m = b.size();

  SinkhornResult r;
  r.f = Vectord::Zero(n);
  r.g = Vectord::Zero(m);
  // Epsilon scaling: anneal from the cost scale down to the target, each
  // stage warm-started from the previous potentials.
  const double top = std::max(eps, 0.5 * cost.cwiseAbs().maxCoeff());
  double stage_eps = top;
  while (stage_eps > eps) {
    const auto s = run_stage(a, b, cost, stage_eps, opts.max_iters - r.iterations, std::max(opts.tol, 1e-4), r.f, r.g);
    r.iterations += s.iterations;
    stage_eps = std::max(eps, stage_eps * 0.25);
    if (r.iterations >= opts.max_iters) break;
  }
  if (r.iterations < opts.max_iters) {
    const auto s = run_stage(a, b, cost, eps, opts.max_iters - r.iterations, opts.tol, r.f, r.g);
    r.iterations += s.iterations;
    r.converged = s.converged;
  }

  r.plan = kernel(r.f, r.g, cost, eps);
  const double row_err = (r.plan.rowwise().sum() - a).cwiseAbs().sum();
  const double col_err = (r.plan.colwise().sum().transpose() - b).cwiseAbs().sum();
  r.marginal_error = std::max(row_err, col_err);
  r.converged = r.converged && r.marginal_error < opts.tol;
  r.value = (r.plan.array() * cost.array()).sum();
  r.dual_value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (a(i) > 0.0) r.dual_value += a(i) * r.f(i);
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    if (b(j) > 0.0) r.dual_value += b(j) * r.g(j);
  }
  return r;
}

}  // namespace tdrl::ot

#include "tdrl/oracles/lp.hpp"

#include <algorithm>
#include <cmath>

namespace tdrl::oracle {

namespace {

constexpr double kTol = 1e-11;

// Tableau rows 0..rows-1 are constraints, last row is the objective (reduced
// costs, with -value in the rhs column). Bland: smallest eligible index.
bool run_simplex(Tensord& t, std::vector<int>& basis, int ncols_allowed) {
  const int rows = static_cast<int>(t.rows()) - 1;
  const int rhs = static_cast<int>(t.cols()) - 1;
  for (int iter = 0; iter < 100000; ++iter) {
    int enter = -1;
    for (int j = 0; j < ncols_allowed; ++j) {
      if (t(rows, j) < -kTol) {
        enter = j;
        break;
      }
    }
    if (enter < 0) return true;
    int leave = -1;
    double best = 0.0;
    for (int r = 0; r < rows; ++r) {
      if (t(r, enter) > kTol) {
        const double ratio = t(r, rhs) / t(r, enter);
        if (leave < 0 || ratio < best - kTol || (std::abs(ratio - best) <= kTol && basis[r] < basis[leave])) {
          leave = r;
          best = ratio;
        }
      }
    }
    if (leave < 0) return false;  // unbounded
    t.row(leave) /= t(leave, enter);
    for (int r = 0; r <= rows; ++r) {
      if (r != leave && t(r, enter) != 0.0) t.row(r) -= t(r, enter) * t.row(leave);
    }
    basis[static_cast<std::size_t>(leave)] = enter;
  }
  return false;
}

}  // namespace

std::optional<LpSolution> linprog_equality(const Tensord& A, const Vectord& b, const Vectord& c) {
  const int rows = static_cast<int>(A.rows());
  const int n = static_cast<int>(A.cols());
  // Phase 1 tableau: [A | I | b], objective = sum of artificials.
  Tensord t = Tensord::Zero(rows + 1, n + rows + 1);
  std::vector<int> basis(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const double sign = b(r) < 0 ? -1.0 : 1.0;
    t.row(r).head(n) = sign * A.row(r);
    t(r, n + r) = 1.0;
    t(r, n + rows) = sign * b(r);
    basis[static_cast<std::size_t>(r)] = n + r;
  }
  for (int r = 0; r < rows; ++r) t.row(rows) -= t.row(r);
  for (int r = 0; r < rows; ++r) t(rows, n + r) = 0.0;
  if (!run_simplex(t, basis, n + rows)) return std::nullopt;
  if (-t(rows, n + rows) > 1e-9) return std::nullopt;

  // Drive remaining artificials out of the basis where possible.
  for (int r = 0; r < rows; ++r) {
    if (basis[static_cast<std::size_t>(r)] < n) continue;
    for (int j = 0; j < n; ++j) {
      if (std::abs(t(r, j)) > 1e-9) {
        t.row(r) /= t(r, j);
        for (int q = 0; q <= rows; ++q) {
          if (q != r) t.row(q) -= t(q, j) * t.row(r);
        }
        basis[static_cast<std::size_t>(r)] = j;
        break;
      }
    }
  }

  // Phase 2: original objective, artificial columns barred from entering.
  t.row(rows).setZero();
  t.row(rows).head(n) = c.transpose();
  for (int r = 0; r < rows; ++r) {
    const int bj = basis[static_cast<std::size_t>(r)];
    if (bj < n && t(rows, bj) != 0.0) t.row(rows) -= t(rows, bj) * t.row(r);
  }
  if (!run_simplex(t, basis, n)) return std::nullopt;

  LpSolution sol;
  sol.x = Vectord::Zero(n);
  for (int r = 0; r < rows; ++r) {
    const int bj = basis[static_cast<std::size_t>(r)];
    if (bj < n) sol.x(bj) = t(r, n + rows);
  }
  sol.value = c.dot(sol.x);
  return sol;
}

double transport_lp(const Vectord& a, const Vectord& b, const Tensord& cost, Tensord* plan) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  Tensord A = Tensord::Zero(n + m, n * m);
  Vectord rhs(n + m);
  Vectord c(n * m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      A(i, i * m + j) = 1.0;
      A(n + j, i * m + j) = 1.0;
      c(i * m + j) = cost(i, j);
    }
  }
  rhs << a, b;
  auto sol = linprog_equality(A, rhs, c);
  if (!sol) throw ContractError("transport_lp: infeasible marginals");
  if (plan) {
    *plan = Tensord(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) (*plan)(i, j) = sol->x(i * m + j);
  }
  return sol->value;
}

double transport_2x2_bruteforce(const Vectord& a, const Vectord& b, const Tensord& cost) {
  if (a.size() != 2 || b.size() != 2) throw DimensionError("transport_2x2_bruteforce: needs 2x2");
  auto objective = [&](double t) {
    return cost(0, 0) * t + cost(0, 1) * (a(0) - t) + cost(1, 0) * (b(0) - t) + cost(1, 1) * (a(1) - b(0) + t);
  };
  const double lo = std::max(0.0, b(0) - a(1));
  const double hi = std::min(a(0), b(0));
  return std::min(objective(lo), objective(hi));
}

}  // namespace tdrl::oracle

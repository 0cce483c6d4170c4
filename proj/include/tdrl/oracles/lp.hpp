#pragma once

#include "tdrl/core/types.hpp"

#include <optional>

/// Reference solvers kept deliberately simple and independent of the
/// production solvers; used by tests and the verify harness.
namespace tdrl::oracle {

struct LpSolution {
  double value = 0.0;
  Vectord x;
};

/// min c^T x subject to A x = b, x >= 0, via a dense two-phase tableau
/// simplex with Bland's rule. Returns nullopt if infeasible.
std::optional<LpSolution> linprog_equality(const Tensord& A, const Vectord& b, const Vectord& c);

/// Optimal transport value by the dense LP above (intended for n*m <= 64).
double transport_lp(const Vectord& a, const Vectord& b, const Tensord& cost, Tensord* plan = nullptr);

/// 2x2 transport: the polytope is a segment in the top-left entry t; the
/// linear objective is minimized at one of its two endpoints.
double transport_2x2_bruteforce(const Vectord& a, const Vectord& b, const Tensord& cost);

}  // namespace tdrl::oracle

#pragma once

#include "tdrl/ot/measure.hpp"

namespace tdrl::ot {

struct ExactResult {
  double value = 0.0;
  Tensord plan;  // [n, m]
  Vectord u;     // row potentials
  Vectord v;     // column potentials, u_i + v_j <= C_ij with equality on the basis
  int pivots = 0;
};

/// Exact Kantorovich problem min <C, P> over plans with marginals (a, b),
/// solved with the transportation (network) simplex on the bipartite graph.
ExactResult exact_transport(const Vectord& a, const Vectord& b, const Tensord& cost);

template <typename Scalar>
ExactResult exact_wasserstein(const DiscreteMeasure<Scalar>& mu, const DiscreteMeasure<Scalar>& nu,
                              const Tensord& cost) {
  mu.validate();
  nu.validate();
  return exact_transport(mu.weights.template cast<double>(), nu.weights.template cast<double>(), cost);
}

}  // namespace tdrl::ot

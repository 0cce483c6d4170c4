#pragma once

#include "tdrl/ot/measure.hpp"

namespace tdrl::ot {

struct SinkhornOptions {
  double epsilon = 0.05;
  int max_iters = 10000;
  double tol = 1e-6;  // L1 marginal violation
};

struct SinkhornResult {
  double value = 0.0;       // <C, P>, without the entropy term
  double dual_value = 0.0;  // <a, f> + <b, g>
  Tensord plan;
  Vectord f;  // row potential
  Vectord g;  // column potential
  int iterations = 0;
  bool converged = false;
  double marginal_error = 0.0;
};

/// Entropic OT in the log-stabilized scaling form: kernel scalings are
/// absorbed into the potentials whenever they grow large, and a log-domain
/// update replaces a scaling step whenever the kernel underflows.
SinkhornResult sinkhorn(const Vectord& a, const Vectord& b, const Tensord& cost, const SinkhornOptions& opts);

template <typename Scalar>
SinkhornResult sinkhorn(const DiscreteMeasure<Scalar>& mu, const DiscreteMeasure<Scalar>& nu, const Tensord& cost,
                        const SinkhornOptions& opts) {
  mu.validate();
  nu.validate();
  return sinkhorn(mu.weights.template cast<double>(), nu.weights.template cast<double>(), cost, opts);
}

/// 0.05 x mean(C), floored so a degenerate all-zero cost still gets epsilon > 0.
double default_epsilon(const Tensord& cost, double factor = 0.05);

}  // namespace tdrl::ot

#pragma once

#include "tdrl/core/types.hpp"

#include <functional>

namespace tdrl::ot {

enum class CostKind { SquaredEuclidean, Euclidean, Custom };

const char* cost_kind_name(CostKind k);
CostKind parse_cost_kind(const std::string& name);

/// Finite support points in R^d with probability weights on the simplex.
template <typename Scalar>
struct DiscreteMeasure {
  Tensor<Scalar> support;  // [n, d]
  Vector<Scalar> weights;  // [n]

  Eigen::Index size() const { return support.rows(); }
  Eigen::Index dim() const { return support.cols(); }

  /// Throws ContractError unless n >= 1, weights >= 0 and sum to 1 within 1e-6.
  void validate() const {
    if (support.rows() < 1) throw ContractError("measure: empty support");
    if (weights.size() != support.rows()) {
      throw DimensionError("measure: " + std::to_string(weights.size()) + " weights for " +
                           std::to_string(support.rows()) + " support points");
    }
    require_finite(support, "measure support");
    require_finite(weights, "measure weights");
    if ((weights.array() < Scalar(0)).any()) throw ContractError("measure: negative weight");
    const double total = static_cast<double>(weights.sum());
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractError("measure: weights sum to " + std::to_string(total));
    }
  }

  static DiscreteMeasure uniform(Tensor<Scalar> points) {
    const auto n = points.rows();
    DiscreteMeasure m{std::move(points), Vector<Scalar>::Constant(n, Scalar(1) / static_cast<Scalar>(n))};
    m.validate();
    return m;
  }

  static DiscreteMeasure dirac(Tensor<Scalar> point) {
    DiscreteMeasure m{std::move(point), Vector<Scalar>::Ones(1)};
    m.validate();
    return m;
  }
};

using Measure = DiscreteMeasure<double>;

/// Entry (i, j) = c(x_i, y_j).
template <typename Scalar>
Tensor<double> cost_matrix(const Tensor<Scalar>& x, const Tensor<Scalar>& y, CostKind kind) {
  if (x.cols() != y.cols()) {
    throw DimensionError("cost_matrix: point dims " + shape_of(x) + " vs " + shape_of(y));
  }
  if (kind == CostKind::Custom) throw ContractError("cost_matrix: custom cost has no formula");
  const Tensor<double> xd = x.template cast<double>();
  const Tensor<double> yd = y.template cast<double>();
  Tensor<double> c = (-2.0 * xd * yd.transpose()).eval();
  c.colwise() += xd.rowwise().squaredNorm();
  c.rowwise() += yd.rowwise().squaredNorm().transpose();
  c = c.cwiseMax(0.0);
  if (kind == CostKind::Euclidean) c = c.cwiseSqrt();
  return c;
}

/// Support f(x_i) with unchanged weights; coincident images stay separate atoms.
template <typename Scalar>
DiscreteMeasure<Scalar> pushforward(const std::function<Tensor<Scalar>(const Tensor<Scalar>&)>& f,
                                    const DiscreteMeasure<Scalar>& mu) {
  Tensor<Scalar> mapped = f(mu.support);
  if (mapped.rows() != mu.support.rows()) {
    throw DimensionError("pushforward: map changed the number of support points");
  }
  return {std::move(mapped), mu.weights};
}

/// Gradient of <C, P> with respect to mu.support with the plan held fixed.
template <typename Scalar>
Tensor<double> support_gradient(const DiscreteMeasure<Scalar>& mu, const DiscreteMeasure<Scalar>& nu,
                                CostKind kind, const Tensor<double>& plan) {
  if (plan.rows() != mu.size() || plan.cols() != nu.size()) {
    throw DimensionError("support_gradient: plan " + shape_of(plan) + " for measures of size " +
                         std::to_string(mu.size()) + ", " + std::to_string(nu.size()));
  }
  const Tensor<double> x = mu.support.template cast<double>();
  const Tensor<double> y = nu.support.template cast<double>();
  switch (kind) {
    case CostKind::SquaredEuclidean: {
      Tensor<double> grad = 2.0 * (x.array().colwise() * plan.rowwise().sum().array()).matrix() - 2.0 * plan * y;
      return grad;
    }
    case CostKind::Euclidean: {
      Tensor<double> grad = Tensor<double>::Zero(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < y.rows(); ++j) {
          const auto diff = (x.row(i) - y.row(j)).eval();
          const double norm = diff.norm();
          if (norm > 0.0) grad.row(i) += plan(i, j) / norm * diff;
        }
      }
      return grad;
    }
    case CostKind::Custom: break;
  }
  throw ContractError("support_gradient: cost kind has no defined derivative");
}

}  // namespace tdrl::ot

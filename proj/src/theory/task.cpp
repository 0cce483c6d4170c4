#include "tdrl/theory/task.hpp"

#include <cmath>

namespace tdrl::theory {

const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::Squared: return "squared";
    case LossKind::Euclidean: return "euclidean";
    case LossKind::CrossEntropy: return "cross_entropy";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "squared") return LossKind::Squared;
  if (name == "euclidean") return LossKind::Euclidean;
  if (name == "cross_entropy") return LossKind::CrossEntropy;
  throw std::invalid_argument("unknown loss kind '" + name + "'");
}

double sample_loss(LossKind kind, const Eigen::Ref<const Eigen::RowVectorXd>& y,
                   const Eigen::Ref<const Eigen::RowVectorXd>& pred) {
  if (y.size() != pred.size()) throw DimensionError("sample_loss: label/prediction dims differ");
  switch (kind) {
    case LossKind::Squared: return (y - pred).squaredNorm();
    case LossKind::Euclidean: return (y - pred).norm();
    case LossKind::CrossEntropy: {
      const double mx = pred.maxCoeff();
      const double lse = mx + std::log((pred.array() - mx).exp().sum());
      return -(y.array() * (pred.array() - lse)).sum();
    }
  }
  return 0.0;
}

SyntheticTask quadratic_task(LossKind loss) {
  return {"quadratic", 2, 1, loss, [](Rng& rng, int n) {
            Sample s{Tensord(n, 2), Tensord(n, 1)};
            for (int i = 0; i < n; ++i) {
              s.x(i, 0) = rng.uniform(-1.0, 1.0);
              s.x(i, 1) = rng.uniform(-1.0, 1.0);
              s.y(i, 0) = s.x(i, 0) + 0.7 * s.x(i, 1) * s.x(i, 1);
            }
            return s;
          }};
}

SyntheticTask two_mode_task() {
  return {"two_mode", 1, 1, LossKind::Squared, [](Rng& rng, int n) {
            Sample s{Tensord(n, 1), Tensord(n, 1)};
            for (int i = 0; i < n; ++i) {
              s.y(i, 0) = rng.normal(rng.bernoulli(0.5) ? 2.0 : -2.0, 0.3);
              s.x(i, 0) = s.y(i, 0);
            }
            return s;
          }};
}

SyntheticTask constant_task(double value) {
  return {"constant", 1, 1, LossKind::Squared, [value](Rng& rng, int n) {
            Sample s{Tensord(n, 1), Tensord::Constant(n, 1, value)};
            for (int i = 0; i < n; ++i) s.x(i, 0) = rng.uniform();
            return s;
          }};
}

SyntheticTask blobs_task(int classes, int dx, double sd) {
  if (classes < 2 || dx < 1) throw ContractError("blobs_task: need K >= 2 and dx >= 1");
  return {"blobs", dx, classes, LossKind::CrossEntropy, [classes, dx, sd](Rng& rng, int n) {
            Sample s{Tensord(n, dx), Tensord::Zero(n, classes)};
            for (int i = 0; i < n; ++i) {
              const int k = rng.below(classes);
              for (int j = 0; j < dx; ++j) s.x(i, j) = rng.normal(0.0, sd);
              s.x(i, k % dx) += (k / dx) % 2 == 0 ? 3.0 : -3.0;
              s.y(i, k) = 1.0;
            }
            return s;
          }};
}

}  // namespace tdrl::theory

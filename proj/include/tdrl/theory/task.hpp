#pragma once

#include "tdrl/core/rng.hpp"
#include "tdrl/core/types.hpp"

#include <functional>
#include <string>

namespace tdrl::theory {

enum class LossKind { Squared, Euclidean, CrossEntropy };

const char* loss_kind_name(LossKind k);
LossKind parse_loss_kind(const std::string& name);

/// Per-sample task loss between a label row and a prediction row. For cross
/// entropy the label is a distribution and the prediction holds logits.
double sample_loss(LossKind kind, const Eigen::Ref<const Eigen::RowVectorXd>& y,
                   const Eigen::Ref<const Eigen::RowVectorXd>& pred);

/// Whether the loss is a metric, so assignment-discrepancy sign checks apply.
inline bool is_metric(LossKind k) { return k == LossKind::Euclidean; }

struct Sample {
  Tensord x;  // [N, dx]
  Tensord y;  // [N, dy]
};

/// Inputs drawn from a fixed population with a deterministic labelling function.
struct SyntheticTask {
  std::string name;
  int dx = 1;
  int dy = 1;
  LossKind loss = LossKind::Squared;
  std::function<Sample(Rng&, int)> sample;
};

/// x ~ U[-1, 1]^2, y = x1 + 0.7 x2^2.
SyntheticTask quadratic_task(LossKind loss = LossKind::Euclidean);

/// One-dimensional labels from an equal mixture of N(-2, 0.3^2) and N(2, 0.3^2); x = y.
SyntheticTask two_mode_task();

/// Every label equal to `value`.
SyntheticTask constant_task(double value = 0.7);

/// K Gaussian blobs in R^dx with one-hot labels; blob k centered at 3 e_(k mod dx) with sign alternating.
SyntheticTask blobs_task(int classes, int dx = 2, double sd = 0.5);

}  // namespace tdrl::theory

#pragma once

#include "tdrl/core/graph.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace tdrl {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// SGD or Adam over a fixed list of parameters. Frozen parameters are
/// skipped. A step is refused (NumericError, parameters untouched) when any
/// gradient is non-finite.
template <typename Scalar>
class Optimizer {
public:
  using T = Tensor<Scalar>;

  Optimizer(ParameterList<Scalar> params, OptimizerConfig config)
      : params_(std::move(params)), config_(config) {
    for (const auto* p : params_) {
      first_.push_back(T::Zero(p->value.rows(), p->value.cols()));
      second_.push_back(T::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(const GradientMap<Scalar>& grads) {
    std::vector<T> g;
    g.reserve(params_.size());
    for (const auto* p : params_) {
      g.push_back(grads.of(*p));
      if (g.back().rows() != p->value.rows() || g.back().cols() != p->value.cols()) {
        throw DimensionError("optimizer: gradient shape mismatch for " + p->name);
      }
      if (!g.back().allFinite()) {
        throw NumericError("optimizer: non-finite gradient for " + p->name + ", step refused");
      }
    }
    ++step_;
    const auto lr = static_cast<Scalar>(config_.learning_rate);
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* p = params_[i];
      if (!p->trainable) continue;
      if (config_.kind == OptimizerKind::Sgd) {
        p->value -= lr * g[i];
        continue;
      }
      const auto b1 = static_cast<Scalar>(config_.beta1);
      const auto b2 = static_cast<Scalar>(config_.beta2);
      first_[i] = b1 * first_[i] + (Scalar(1) - b1) * g[i];
      second_[i] = b2 * second_[i] + (Scalar(1) - b2) * g[i].cwiseProduct(g[i]);
      const auto c1 = static_cast<Scalar>(1.0 / bc1);
      const auto c2 = static_cast<Scalar>(1.0 / bc2);
      const auto eps = static_cast<Scalar>(config_.epsilon);
      p->value.array() -=
          lr * (first_[i].array() * c1) / ((second_[i].array() * c2).sqrt() + eps);
    }
  }

  std::int64_t steps() const { return step_; }
  const OptimizerConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  const T& first_moment(std::size_t i) const { return first_.at(i); }
  const T& second_moment(std::size_t i) const { return second_.at(i); }
  const ParameterList<Scalar>& parameters() const { return params_; }

private:
  ParameterList<Scalar> params_;
  OptimizerConfig config_;
  std::vector<T> first_;
  std::vector<T> second_;
  std::int64_t step_ = 0;
};

}  // namespace tdrl

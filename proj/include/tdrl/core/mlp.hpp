#pragma once

#include "tdrl/core/graph.hpp"
#include "tdrl/core/rng.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace tdrl {

enum class Activation { Tanh, Relu, Identity };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

/// Fully connected network. Layer i maps dims[i] -> dims[i+1] and applies
/// activations[i]. Weights are stored [in, out] so a batch [n, in] is
/// multiplied from the left.
template <typename Scalar>
class Mlp {
public:
  using T = Tensor<Scalar>;

  Mlp() = default;

  /// Glorot-uniform weights, zero biases.
  Mlp(std::string name, std::vector<int> dims, std::vector<Activation> activations, Rng& rng)
      : name_(std::move(name)), dims_(std::move(dims)), activations_(std::move(activations)) {
    if (dims_.size() < 2 || activations_.size() != dims_.size() - 1) {
      throw ContractError("Mlp: need n+1 dims for n activations");
    }
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      const int in = dims_[l];
      const int out = dims_[l + 1];
      if (in < 1 || out < 1) throw ContractError("Mlp: layer dims must be positive");
      const double a = std::sqrt(6.0 / static_cast<double>(in + out));
      Parameter<Scalar> w{name_ + ".w" + std::to_string(l), T(in, out), true};
      for (Eigen::Index i = 0; i < w.value.size(); ++i) {
        w.value.data()[i] = static_cast<Scalar>(rng.uniform(-a, a));
      }
      params_.push_back(std::move(w));
      params_.push_back({name_ + ".b" + std::to_string(l), T::Zero(1, out), true});
    }
  }

  /// Rebuild from explicit weights (checkpoint loading, tests).
  static Mlp from_parameters(std::string name, std::vector<int> dims,
                             std::vector<Activation> activations,
                             std::vector<Parameter<Scalar>> params) {
    Mlp m;
    m.name_ = std::move(name);
    m.dims_ = std::move(dims);
    m.activations_ = std::move(activations);
    m.params_ = std::move(params);
    if (m.params_.size() != 2 * m.activations_.size()) {
      throw ContractError("Mlp: parameter count does not match layer count");
    }
    for (std::size_t l = 0; l < m.activations_.size(); ++l) {
      const auto& w = m.params_[2 * l].value;
      const auto& b = m.params_[2 * l + 1].value;
      if (w.rows() != m.dims_[l] || w.cols() != m.dims_[l + 1] || b.rows() != 1 ||
          b.cols() != m.dims_[l + 1]) {
        throw DimensionError("Mlp: layer " + std::to_string(l) + " parameter shapes do not chain");
      }
    }
    return m;
  }

  Var<Scalar> forward(Var<Scalar> x) const {
    check_input(x.cols());
    Graph<Scalar>& g = x.graph();
    Var<Scalar> h = x;
    for (std::size_t l = 0; l < activations_.size(); ++l) {
      h = add_row(matmul(h, g.param(params_[2 * l])), g.param(params_[2 * l + 1]));
      switch (activations_[l]) {
        case Activation::Tanh: h = tanh(h); break;
        case Activation::Relu: h = relu(h); break;
        case Activation::Identity: break;
      }
    }
    require_finite(h.value(), "mlp output");
    return h;
  }

  /// Graph-free evaluation; same arithmetic as the graph path.
  T forward(const T& x) const {
    check_input(x.cols());
    T h = x;
    for (std::size_t l = 0; l < activations_.size(); ++l) {
      T next = h * params_[2 * l].value;
      next.rowwise() += params_[2 * l + 1].value.row(0);
      switch (activations_[l]) {
        case Activation::Tanh: next = next.array().tanh().matrix(); break;
        case Activation::Relu: next = next.cwiseMax(Scalar(0)); break;
        case Activation::Identity: break;
      }
      h = std::move(next);
    }
    require_finite(h, "mlp output");
    return h;
  }

  ParameterList<Scalar> parameters() {
    ParameterList<Scalar> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  const std::vector<Parameter<Scalar>>& parameter_values() const { return params_; }

  void set_trainable(bool trainable) {
    for (auto& p : params_) p.trainable = trainable;
  }

  const std::string& name() const { return name_; }
  const std::vector<int>& dims() const { return dims_; }
  const std::vector<Activation>& activations() const { return activations_; }
  int in_dim() const { return dims_.front(); }
  int out_dim() const { return dims_.back(); }
  bool empty() const { return dims_.empty(); }

private:
  void check_input(Eigen::Index cols) const {
    if (dims_.empty()) throw ContractError("Mlp: forward on an empty network");
    if (cols != dims_.front()) {
      throw DimensionError(name_ + ": input has " + std::to_string(cols) + " columns, expected " +
                           std::to_string(dims_.front()));
    }
  }

  std::string name_;
  std::vector<int> dims_;
  std::vector<Activation> activations_;
  std::vector<Parameter<Scalar>> params_;
};

using Mlpf = Mlp<float>;

}  // namespace tdrl

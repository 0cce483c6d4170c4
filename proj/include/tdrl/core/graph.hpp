#pragma once

#include "tdrl/core/types.hpp"

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace tdrl {

/// A named trainable tensor. Frozen parameters behave as constants in every
/// graph they enter and always receive a zero gradient.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  bool trainable = true;
};

template <typename Scalar>
using ParameterList = std::vector<Parameter<Scalar>*>;

template <typename Scalar>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename Scalar>
class Var {
public:
  Var() = default;
  Var(Graph<Scalar>* graph, int id) : graph_(graph), id_(id) {}

  const Tensor<Scalar>& value() const;
  Graph<Scalar>& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr && id_ >= 0; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

private:
  Graph<Scalar>* graph_ = nullptr;
  int id_ = -1;
};

/// dLoss/dParameter for every parameter registered in a graph.
template <typename Scalar>
class GradientMap {
public:
  /// Gradient of `p`, or zeros of p's shape when p never entered the graph.
  Tensor<Scalar> of(const Parameter<Scalar>& p) const {
    auto it = grads_.find(&p);
    if (it == grads_.end()) return Tensor<Scalar>::Zero(p.value.rows(), p.value.cols());
    return it->second;
  }

  bool contains(const Parameter<Scalar>& p) const { return grads_.count(&p) != 0; }

  void accumulate(const Parameter<Scalar>& p, const Tensor<Scalar>& g) {
    auto [it, inserted] = grads_.try_emplace(&p, g);
    if (!inserted) it->second += g;
  }

  std::size_t size() const { return grads_.size(); }

private:
  std::unordered_map<const Parameter<Scalar>*, Tensor<Scalar>> grads_;
};

enum class OpKind {
  Constant,
  Param,
  MatMul,
  AddRow,
  Add,
  Sub,
  Mul,
  Scale,
  Tanh,
  Relu,
  Sigmoid,
  Square,
  Sum,
  Mean,
  ConcatCols,
  CrossEntropy,
  BceWithLogits,
  GatherCols,
  GatherRows,
  StraightThrough,
  GradReverse,
  External,
};

const char* op_name(OpKind kind);

/// Tape for reverse-mode differentiation. Nodes are appended in evaluation
/// order, so the tape is topologically sorted by construction and backward()
/// walks it in exact reverse.
template <typename Scalar>
class Graph {
public:
  using T = Tensor<Scalar>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> constant(T value);
  Var<Scalar> param(const Parameter<Scalar>& p);

  Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b);
  /// a [n, k] + bias [1, k], broadcast over rows.
  Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> bias);
  Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);
  Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b);
  Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b);
  Var<Scalar> scale(Var<Scalar> a, Scalar s);
  Var<Scalar> tanh(Var<Scalar> a);
  Var<Scalar> relu(Var<Scalar> a);
  Var<Scalar> sigmoid(Var<Scalar> a);
  Var<Scalar> square(Var<Scalar> a);
  Var<Scalar> sum(Var<Scalar> a);
  Var<Scalar> mean(Var<Scalar> a);
  Var<Scalar> concat_cols(Var<Scalar> a, Var<Scalar> b);
  /// Mean softmax cross-entropy of logits [n, k] against integer labels.
  Var<Scalar> cross_entropy(Var<Scalar> logits, std::span<const int> labels);
  /// Mean binary cross-entropy of logits [n, 1] against targets in [0, 1].
  Var<Scalar> bce_with_logits(Var<Scalar> logits, std::span<const Scalar> targets);
  /// out[i] = a[i, index[i]], shape [n, 1].
  Var<Scalar> gather_cols(Var<Scalar> a, std::span<const int> index);
  /// out[i, :] = a[index[i], :]; indices may repeat.
  Var<Scalar> gather_rows(Var<Scalar> a, std::span<const int> index);
  /// Forward value `quantized`; backward passes the gradient unchanged to z.
  Var<Scalar> straight_through(Var<Scalar> z, T quantized);
  /// Identity forward; backward multiplies the gradient by -beta.
  Var<Scalar> grad_reverse(Var<Scalar> x, Scalar beta);
  /// Scalar node whose value and partial derivatives were computed outside
  /// the graph. `partials[i]` is d(value)/d(inputs[i]).
  Var<Scalar> external(Scalar value, std::vector<Var<Scalar>> inputs, std::vector<T> partials);

  Var<Scalar> detach(Var<Scalar> a) { return constant(a.value()); }

  /// Reverse sweep from a scalar loss. Every parameter registered in the
  /// graph appears in the result (zeros when unreached or frozen).
  GradientMap<Scalar> backward(Var<Scalar> loss);

  const T& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  OpKind kind(int id) const { return nodes_.at(static_cast<std::size_t>(id)).kind; }
  std::size_t size() const { return nodes_.size(); }

private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<int> inputs;
    T value;
    T aux;
    Scalar scalar = Scalar(0);
    std::vector<int> labels;
    std::vector<T> partials;
    const Parameter<Scalar>* param = nullptr;
  };

  Var<Scalar> push(Node node);
  const Node& node(Var<Scalar> v) const;
  void check_owned(Var<Scalar> v) const;

  std::vector<Node> nodes_;
};

template <typename Scalar>
const Tensor<Scalar>& Var<Scalar>::value() const {
  return graph_->value(id_);
}

// Expression-style free functions.

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) { return a.graph().matmul(a, b); }
template <typename S>
Var<S> add_row(Var<S> a, Var<S> bias) { return a.graph().add_row(a, bias); }
template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) { return a.graph().add(a, b); }
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) { return a.graph().sub(a, b); }
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) { return a.graph().mul(a, b); }
template <typename S>
Var<S> operator*(S s, Var<S> a) { return a.graph().scale(a, s); }
template <typename S>
Var<S> operator*(Var<S> a, S s) { return a.graph().scale(a, s); }
template <typename S>
Var<S> operator-(Var<S> a) { return a.graph().scale(a, S(-1)); }
template <typename S>
Var<S> tanh(Var<S> a) { return a.graph().tanh(a); }
template <typename S>
Var<S> relu(Var<S> a) { return a.graph().relu(a); }
template <typename S>
Var<S> sigmoid(Var<S> a) { return a.graph().sigmoid(a); }
template <typename S>
Var<S> square(Var<S> a) { return a.graph().square(a); }
template <typename S>
Var<S> sum(Var<S> a) { return a.graph().sum(a); }
template <typename S>
Var<S> mean(Var<S> a) { return a.graph().mean(a); }
template <typename S>
Var<S> concat_cols(Var<S> a, Var<S> b) { return a.graph().concat_cols(a, b); }
template <typename S>
Var<S> cross_entropy(Var<S> logits, std::span<const int> labels) {
  return logits.graph().cross_entropy(logits, labels);
}
template <typename S>
Var<S> bce_with_logits(Var<S> logits, std::span<const S> targets) {
  return logits.graph().bce_with_logits(logits, targets);
}
template <typename S>
Var<S> gather_cols(Var<S> a, std::span<const int> index) { return a.graph().gather_cols(a, index); }
template <typename S>
Var<S> gather_rows(Var<S> a, std::span<const int> index) { return a.graph().gather_rows(a, index); }
template <typename S>
Var<S> straight_through(Var<S> z, Tensor<S> quantized) {
  return z.graph().straight_through(z, std::move(quantized));
}
template <typename S>
Var<S> grad_reverse(Var<S> x, S beta) { return x.graph().grad_reverse(x, beta); }

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace tdrl

#include "tdrl/core/graph.hpp"

#include <algorithm>
#include <cmath>

namespace tdrl {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Param: return "param";
    case OpKind::MatMul: return "matmul";
    case OpKind::AddRow: return "add_row";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Square: return "square";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::BceWithLogits: return "bce_with_logits";
    case OpKind::GatherCols: return "gather_cols";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::StraightThrough: return "straight_through";
    case OpKind::GradReverse: return "grad_reverse";
    case OpKind::External: return "external";
  }
  return "unknown";
}

namespace {

void require_same_shape(const char* op, Eigen::Index r0, Eigen::Index c0, Eigen::Index r1,
                        Eigen::Index c1) {
  if (r0 != r1 || c0 != c1) {
    throw DimensionError(std::string(op) + ": shape " + shape_string(r0, c0) + " vs " +
                         shape_string(r1, c1));
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> Graph<Scalar>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename Scalar>
void Graph<Scalar>::check_owned(Var<Scalar> v) const {
  if (&v.graph() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size()) {
    throw ContractError("variable does not belong to this graph");
  }
}

template <typename Scalar>
auto Graph<Scalar>::node(Var<Scalar> v) const -> const Node& {
  check_owned(v);
  return nodes_[static_cast<std::size_t>(v.id())];
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::constant(T value) {
  Node n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::param(const Parameter<Scalar>& p) {
  Node n;
  n.kind = OpKind::Param;
  n.value = p.value;
  n.param = &p;
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::matmul(Var<Scalar> a, Var<Scalar> b) {
  const T& av = node(a).value;
  const T& bv = node(b).value;
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: " + shape_of(av) + " x " + shape_of(bv));
  }
  Node n;
  n.kind = OpKind::MatMul;
  n.inputs = {a.id(), b.id()};
  n.value.noalias() = av * bv;
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::add_row(Var<Scalar> a, Var<Scalar> bias) {
  const T& av = node(a).value;
  const T& bv = node(bias).value;
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw DimensionError("add_row: " + shape_of(av) + " + bias " + shape_of(bv));
  }
  Node n;
  n.kind = OpKind::AddRow;
  n.inputs = {a.id(), bias.id()};
  n.value = av.rowwise() + bv.row(0);
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::add(Var<Scalar> a, Var<Scalar> b) {
  const T& av = node(a).value;
  const T& bv = node(b).value;
  require_same_shape("add", av.rows(), av.cols(), bv.rows(), bv.cols());
  Node n;
  n.kind = OpKind::Add;
  n.inputs = {a.id(), b.id()};
  n.value = av + bv;
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::sub(Var<Scalar> a, Var<Scalar> b) {
  const T& av = node(a).value;
  const T& bv = node(b).value;
  require_same_shape("sub", av.rows(), av.cols(), bv.rows(), bv.cols());
  Node n;
  n.kind = OpKind::Sub;
  n.inputs = {a.id(), b.id()};
  n.value = av - bv;
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::mul(Var<Scalar> a, Var<Scalar> b) {
  const T& av = node(a).value;
  const T& bv = node(b).value;
  require_same_shape("mul", av.rows(), av.cols(), bv.rows(), bv.cols());
  Node n;
  n.kind = OpKind::Mul;
  n.inputs = {a.id(), b.id()};
  n.value = av.cwiseProduct(bv);
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::scale(Var<Scalar> a, Scalar s) {
  Node n;
  n.kind = OpKind::Scale;
  n.inputs = {a.id()};
  n.scalar = s;
  n.value = node(a).value * s;
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::tanh(Var<Scalar> a) {
  Node n;
  n.kind = OpKind::Tanh;
  n.inputs = {a.id()};
  n.value = node(a).value.array().tanh().matrix();
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::relu(Var<Scalar> a) {
  Node n;
  n.kind = OpKind::Relu;
  n.inputs = {a.id()};
  n.value = node(a).value.cwiseMax(Scalar(0));
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::sigmoid(Var<Scalar> a) {
  Node n;
  n.kind = OpKind::Sigmoid;
  n.inputs = {a.id()};
  n.value = (Scalar(1) / (Scalar(1) + (-node(a).value.array()).exp())).matrix();
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::square(Var<Scalar> a) {
  Node n;
  n.kind = OpKind::Square;
  n.inputs = {a.id()};
  n.value = node(a).value.array().square().matrix();
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::sum(Var<Scalar> a) {
  Node n;
  n.kind = OpKind::Sum;
  n.inputs = {a.id()};
  n.value = T::Constant(1, 1, node(a).value.sum());
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::mean(Var<Scalar> a) {
  const T& av = node(a).value;
  if (av.size() == 0) throw ContractError("mean of an empty tensor");
  Node n;
  n.kind = OpKind::Mean;
  n.inputs = {a.id()};
  n.value = T::Constant(1, 1, av.mean());
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::concat_cols(Var<Scalar> a, Var<Scalar> b) {
  const T& av = node(a).value;
  const T& bv = node(b).value;
  if (av.rows() != bv.rows()) {
    throw DimensionError("concat_cols: " + shape_of(av) + " | " + shape_of(bv));
  }
  Node n;
  n.kind = OpKind::ConcatCols;
  n.inputs = {a.id(), b.id()};
  n.value.resize(av.rows(), av.cols() + bv.cols());
  n.value << av, bv;
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::cross_entropy(Var<Scalar> logits, std::span<const int> labels) {
  const T& lv = node(logits).value;
  if (static_cast<std::size_t>(lv.rows()) != labels.size()) {
    throw DimensionError("cross_entropy: " + std::to_string(lv.rows()) + " rows vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (lv.rows() == 0) throw ContractError("cross_entropy of an empty batch");
  Node n;
  n.kind = OpKind::CrossEntropy;
  n.inputs = {logits.id()};
  n.labels.assign(labels.begin(), labels.end());
  n.aux.resize(lv.rows(), lv.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < lv.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= lv.cols()) throw ContractError("cross_entropy: label out of range");
    const Scalar m = lv.row(i).maxCoeff();
    n.aux.row(i) = (lv.row(i).array() - m).exp().matrix();
    const Scalar z = n.aux.row(i).sum();
    n.aux.row(i) /= z;
    total += static_cast<double>(std::log(z) + m - lv(i, y));
  }
  n.value = T::Constant(1, 1, static_cast<Scalar>(total / static_cast<double>(lv.rows())));
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::bce_with_logits(Var<Scalar> logits, std::span<const Scalar> targets) {
  const T& lv = node(logits).value;
  if (lv.cols() != 1 || static_cast<std::size_t>(lv.rows()) != targets.size()) {
    throw DimensionError("bce_with_logits: logits " + shape_of(lv) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (lv.rows() == 0) throw ContractError("bce_with_logits of an empty batch");
  Node n;
  n.kind = OpKind::BceWithLogits;
  n.inputs = {logits.id()};
  n.aux.resize(lv.rows(), 2);
  double total = 0.0;
  for (Eigen::Index i = 0; i < lv.rows(); ++i) {
    const Scalar l = lv(i, 0);
    const Scalar t = targets[static_cast<std::size_t>(i)];
    total += static_cast<double>(std::max(l, Scalar(0)) - l * t + std::log1p(std::exp(-std::abs(l))));
    n.aux(i, 0) = Scalar(1) / (Scalar(1) + std::exp(-l));
    n.aux(i, 1) = t;
  }
  n.value = T::Constant(1, 1, static_cast<Scalar>(total / static_cast<double>(lv.rows())));
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::gather_cols(Var<Scalar> a, std::span<const int> index) {
  const T& av = node(a).value;
  if (static_cast<std::size_t>(av.rows()) != index.size()) {
    throw DimensionError("gather_cols: rows vs index length");
  }
  Node n;
  n.kind = OpKind::GatherCols;
  n.inputs = {a.id()};
  n.labels.assign(index.begin(), index.end());
  n.value.resize(av.rows(), 1);
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    const int c = index[static_cast<std::size_t>(i)];
    if (c < 0 || c >= av.cols()) throw ContractError("gather_cols: index out of range");
    n.value(i, 0) = av(i, c);
  }
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::gather_rows(Var<Scalar> a, std::span<const int> index) {
  const T& av = node(a).value;
  Node n;
  n.kind = OpKind::GatherRows;
  n.inputs = {a.id()};
  n.labels.assign(index.begin(), index.end());
  n.value.resize(static_cast<Eigen::Index>(index.size()), av.cols());
  for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
    const int r = index[static_cast<std::size_t>(i)];
    if (r < 0 || r >= av.rows()) throw ContractError("gather_rows: index out of range");
    n.value.row(i) = av.row(r);
  }
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::straight_through(Var<Scalar> z, T quantized) {
  const T& zv = node(z).value;
  require_same_shape("straight_through", zv.rows(), zv.cols(), quantized.rows(), quantized.cols());
  Node n;
  n.kind = OpKind::StraightThrough;
  n.inputs = {z.id()};
  n.value = std::move(quantized);
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::grad_reverse(Var<Scalar> x, Scalar beta) {
  if (beta < Scalar(0)) throw ContractError("grad_reverse: beta must be >= 0");
  Node n;
  n.kind = OpKind::GradReverse;
  n.inputs = {x.id()};
  n.scalar = beta;
  n.value = node(x).value;
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::external(Scalar value, std::vector<Var<Scalar>> inputs,
                                    std::vector<T> partials) {
  if (inputs.size() != partials.size()) {
    throw ContractError("external: one partial derivative per input required");
  }
  Node n;
  n.kind = OpKind::External;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const T& iv = node(inputs[i]).value;
    require_same_shape("external", iv.rows(), iv.cols(), partials[i].rows(), partials[i].cols());
    n.inputs.push_back(inputs[i].id());
  }
  n.partials = std::move(partials);
  n.value = T::Constant(1, 1, value);
  return push(std::move(n));
}

template <typename Scalar>
GradientMap<Scalar> Graph<Scalar>::backward(Var<Scalar> loss) {
  const Node& root = node(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_of(root.value));
  }
  require_finite(root.value, "loss");

  const auto count = static_cast<std::size_t>(loss.id()) + 1;
  std::vector<T> grads(count);
  std::vector<char> reached(count, 0);
  auto accumulate = [&](int id, const auto& g) {
    const auto k = static_cast<std::size_t>(id);
    if (!reached[k]) {
      grads[k] = g;
      reached[k] = 1;
    } else {
      grads[k] += g;
    }
  };
  accumulate(loss.id(), T::Ones(1, 1));

  for (std::size_t k = count; k-- > 0;) {
    if (!reached[k]) continue;
    Node& n = nodes_[k];
    const T& g = grads[k];
    switch (n.kind) {
      case OpKind::Constant:
      case OpKind::Param:
        break;
      case OpKind::MatMul: {
        const T& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        const T& b = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
        accumulate(n.inputs[0], (g * b.transpose()).eval());
        accumulate(n.inputs[1], (a.transpose() * g).eval());
        break;
      }
      case OpKind::AddRow:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], g.colwise().sum().eval());
        break;
      case OpKind::Add:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], g);
        break;
      case OpKind::Sub:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], (-g).eval());
        break;
      case OpKind::Mul: {
        const T& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        const T& b = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
        accumulate(n.inputs[0], g.cwiseProduct(b).eval());
        accumulate(n.inputs[1], g.cwiseProduct(a).eval());
        break;
      }
      case OpKind::Scale:
        accumulate(n.inputs[0], (g * n.scalar).eval());
        break;
      case OpKind::Tanh:
        accumulate(n.inputs[0],
                   (g.array() * (Scalar(1) - n.value.array().square())).matrix().eval());
        break;
      case OpKind::Relu: {
        const T& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        accumulate(n.inputs[0], (a.array() > Scalar(0)).select(g, Scalar(0)).eval());
        break;
      }
      case OpKind::Sigmoid:
        accumulate(n.inputs[0],
                   (g.array() * n.value.array() * (Scalar(1) - n.value.array())).matrix().eval());
        break;
      case OpKind::Square: {
        const T& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        accumulate(n.inputs[0], (Scalar(2) * g.cwiseProduct(a)).eval());
        break;
      }
      case OpKind::Sum: {
        const T& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        accumulate(n.inputs[0], T::Constant(a.rows(), a.cols(), g(0, 0)));
        break;
      }
      case OpKind::Mean: {
        const T& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        accumulate(n.inputs[0],
                   T::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<Scalar>(a.size())));
        break;
      }
      case OpKind::ConcatCols: {
        const auto left = nodes_[static_cast<std::size_t>(n.inputs[0])].value.cols();
        accumulate(n.inputs[0], g.leftCols(left).eval());
        accumulate(n.inputs[1], g.rightCols(g.cols() - left).eval());
        break;
      }
      case OpKind::CrossEntropy: {
        T d = n.aux;
        for (Eigen::Index i = 0; i < d.rows(); ++i) d(i, n.labels[static_cast<std::size_t>(i)]) -= 1;
        d *= g(0, 0) / static_cast<Scalar>(d.rows());
        accumulate(n.inputs[0], d);
        break;
      }
      case OpKind::BceWithLogits: {
        T d = (n.aux.col(0) - n.aux.col(1)) * (g(0, 0) / static_cast<Scalar>(n.aux.rows()));
        accumulate(n.inputs[0], d);
        break;
      }
      case OpKind::GatherCols: {
        const T& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        T d = T::Zero(a.rows(), a.cols());
        for (Eigen::Index i = 0; i < a.rows(); ++i) d(i, n.labels[static_cast<std::size_t>(i)]) = g(i, 0);
        accumulate(n.inputs[0], d);
        break;
      }
      case OpKind::GatherRows: {
        const T& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
        T d = T::Zero(a.rows(), a.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) d.row(n.labels[static_cast<std::size_t>(i)]) += g.row(i);
        accumulate(n.inputs[0], d);
        break;
      }
      case OpKind::StraightThrough:
        accumulate(n.inputs[0], g);
        break;
      case OpKind::GradReverse:
        accumulate(n.inputs[0], (g * -n.scalar).eval());
        break;
      case OpKind::External:
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          accumulate(n.inputs[i], (n.partials[i] * g(0, 0)).eval());
        }
        break;
    }
  }

  GradientMap<Scalar> result;
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    const Node& n = nodes_[k];
    if (n.kind != OpKind::Param) continue;
    if (k < count && reached[k] && n.param->trainable) {
      result.accumulate(*n.param, grads[k]);
    } else {
      result.accumulate(*n.param, T::Zero(n.value.rows(), n.value.cols()));
    }
  }
  return result;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace tdrl

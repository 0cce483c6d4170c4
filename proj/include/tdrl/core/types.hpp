#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace tdrl {

/// Dense row-major matrix; the unit of all numerical computation.
/// Vectors are 1 x n rows, scalars are 1 x 1.
template <typename Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Vectord = Vector<double>;

/// Shape or dimension mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or Inf appeared where finite values are required.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Caller violated a precondition.
class ContractError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + ", " + std::to_string(cols) + "]";
}

template <typename Derived>
std::string shape_of(const Eigen::DenseBase<Derived>& m) {
  return shape_string(m.rows(), m.cols());
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what) {
  if (!m.derived().allFinite()) {
    throw NumericError(std::string("non-finite values in ") + what);
  }
}

}  // namespace tdrl

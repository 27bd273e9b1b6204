#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace sasg {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Flat model parameters or gradients. Accounting counts 32-bit words, but
/// arithmetic runs in double.
using ParamVector = Vector<double>;

namespace detail {
inline void require_same_size(Index a, Index b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ")");
  }
}
}  // namespace detail

/// z = alpha * x + y, element by element.
template <typename DerivedX, typename DerivedY>
Vector<typename DerivedX::Scalar> axpy(typename DerivedX::Scalar alpha,
                                       const Eigen::MatrixBase<DerivedX>& x,
                                       const Eigen::MatrixBase<DerivedY>& y) {
  detail::require_same_size(x.size(), y.size(), "axpy");
  Vector<typename DerivedX::Scalar> z(x.size());
  for (Index i = 0; i < x.size(); ++i) z[i] = alpha * x[i] + y[i];
  return z;
}

// The reductions below run strictly left to right. Eigen's own redux would
// reassociate through SIMD lanes, and the oracle tests compare bitwise.

template <typename Derived>
typename Derived::Scalar sq_norm(const Eigen::MatrixBase<Derived>& x) {
  typename Derived::Scalar acc(0);
  for (Index i = 0; i < x.size(); ++i) acc += x[i] * x[i];
  return acc;
}

template <typename DerivedX, typename DerivedY>
typename DerivedX::Scalar dot(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y) {
  detail::require_same_size(x.size(), y.size(), "dot");
  typename DerivedX::Scalar acc(0);
  for (Index i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

/// ||x - y||^2 without materializing the difference.
template <typename DerivedX, typename DerivedY>
typename DerivedX::Scalar sq_distance(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y) {
  detail::require_same_size(x.size(), y.size(), "sq_distance");
  typename DerivedX::Scalar acc(0);
  for (Index i = 0; i < x.size(); ++i) {
    const auto diff = x[i] - y[i];
    acc += diff * diff;
  }
  return acc;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& x) {
  for (Index i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) return false;
  }
  return true;
}

}  // namespace sasg

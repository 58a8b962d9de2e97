#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

#include "st5/errors.hpp"
#include "st5/tensor.hpp"

// Plain (non-recording) numeric kernels. The autodiff layer reuses these for
// its forward values, so every differentiable op has exactly one definition
// of its forward math.
namespace st5 {

inline constexpr double kNormEpsilon = 1e-12;

// log(sum(exp(x))) with max subtraction; -inf entries contribute zero mass.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = x.maxCoeff();
  if (m == -std::numeric_limits<Scalar>::infinity()) return m;
  return m + std::log((x.derived().array() == -std::numeric_limits<Scalar>::infinity())
                          .select(Scalar(0), (x.derived().array() - m).exp())
                          .sum());
}

template <typename Derived>
RowMatrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x,
                                                 typename Derived::Scalar temperature) {
  using Scalar = typename Derived::Scalar;
  if (!(temperature > Scalar(0))) throw ParameterError("softmax temperature must be > 0");
  RowMatrix<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    constexpr Scalar kNegInf = -std::numeric_limits<Scalar>::infinity();
    // -inf entries get exactly 0 (vectorized exp would leave a denormal)
    out.row(i) = (x.row(i).array() == kNegInf).select(Scalar(0), ((x.row(i).array() - m) / temperature).exp()).matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 1, Eigen::Dynamic> l2_normalize(
    const Eigen::MatrixBase<Derived>& v) {
  const auto n = v.norm();
  if (!(n > kNormEpsilon)) throw DegenerateInputError("cannot normalize a vector with norm ~0");
  return v.reshaped(1, v.size()) / n;
}

template <typename Derived>
RowMatrix<typename Derived::Scalar> l2_normalize_rows(const Eigen::MatrixBase<Derived>& x) {
  RowMatrix<typename Derived::Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const auto n = x.row(i).norm();
    if (!(n > kNormEpsilon)) {
      throw DegenerateInputError("row " + std::to_string(i) + " has norm ~0");
    }
    out.row(i) = x.row(i) / n;
  }
  return out;
}

// Mean of the rows of `x` whose mask entry is nonzero.
template <typename DerivedX, typename DerivedM>
Eigen::Matrix<typename DerivedX::Scalar, 1, Eigen::Dynamic> masked_mean(
    const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedM>& mask) {
  using Scalar = typename DerivedX::Scalar;
  if (mask.size() != x.rows()) {
    throw DimensionError("mask length " + std::to_string(mask.size()) + " != rows " +
                         std::to_string(x.rows()));
  }
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> acc = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>::Zero(x.cols());
  Index count = 0;
  for (Index i = 0; i < x.rows(); ++i) {
    if (mask(i) != 0) {
      acc += x.row(i);
      ++count;
    }
  }
  if (count == 0) throw DegenerateInputError("masked_mean over an all-zero mask");
  return acc / static_cast<Scalar>(count);
}

// Tensor-level conveniences.
inline Tensor softmax_rows(const Tensor& x, double temperature) {
  return Tensor(x.shape(), softmax_rows(x.mat(), temperature));
}

// Normalizes the whole tensor as one flat vector.
inline Tensor l2_normalize(const Tensor& v) {
  const Matrix flat = l2_normalize(v.mat().reshaped<Eigen::RowMajor>(1, v.size()));
  return Tensor(v.shape(), Matrix(flat.reshaped<Eigen::RowMajor>(v.mat().rows(), v.mat().cols())));
}

inline Tensor masked_mean(const Tensor& x, const Tensor& mask) {
  if (x.rank() != 2 || mask.rank() != 1) {
    throw DimensionError("masked_mean expects [L x d] rows and an [L] mask, got " +
                         shape_string(x.shape()) + " and " + shape_string(mask.shape()));
  }
  Matrix m = masked_mean(x.mat(), mask.mat().row(0));
  return Tensor(Shape{x.dim(1)}, std::move(m));
}

}  // namespace st5

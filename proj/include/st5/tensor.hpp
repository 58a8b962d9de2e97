#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "st5/errors.hpp"

namespace st5 {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// Dense row-major n-d array. Storage is a 2-D Eigen matrix whose column count
// is the last dimension and whose row count is the product of the leading
// dimensions, so a [batch x len x d] tensor is directly usable as a
// (batch*len) x d matrix. A rank-0 tensor is a 1x1 matrix.
template <typename Scalar>
class BasicTensor {
 public:
  using Matrix = RowMatrix<Scalar>;

  BasicTensor() : shape_{0}, data_(0, 1) {}

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(Matrix::Constant(rows_for(shape_), cols_for(shape_), fill)) {
    validate_shape();
  }

  BasicTensor(Shape shape, Matrix data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.rows() != rows_for(shape_) || data_.cols() != cols_for(shape_)) {
      throw DimensionError("tensor storage " + std::to_string(data_.rows()) + "x" +
                           std::to_string(data_.cols()) + " does not match shape " +
                           shape_string(shape_));
    }
  }

  BasicTensor(Shape shape, std::span<const Scalar> values) : BasicTensor(std::move(shape)) {
    if (static_cast<Index>(values.size()) != size()) {
      throw DimensionError("tensor of shape " + shape_string(shape_) + " needs " +
                           std::to_string(size()) + " values, got " + std::to_string(values.size()));
    }
    std::copy(values.begin(), values.end(), data_.data());
  }

  static BasicTensor scalar(Scalar value) { return BasicTensor(Shape{}, value); }

  static BasicTensor vector(std::initializer_list<Scalar> values) {
    return BasicTensor(Shape{static_cast<Index>(values.size())},
                       std::span<const Scalar>(values.begin(), values.size()));
  }

  // Wraps a dense matrix as a rank-2 tensor.
  template <typename Derived>
  static BasicTensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    return BasicTensor(Shape{m.rows(), m.cols()}, Matrix(m));
  }

  static BasicTensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r ? static_cast<Index>(rows.begin()->size()) : 0;
    Matrix m(r, c);
    Index i = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != c) throw DimensionError("ragged matrix literal");
      Index j = 0;
      for (Scalar v : row) m(i, j++) = v;
      ++i;
    }
    return BasicTensor(Shape{r, c}, std::move(m));
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  bool requires_grad() const { return requires_grad_; }
  BasicTensor& set_requires_grad(bool flag) {
    requires_grad_ = flag;
    return *this;
  }

  Matrix& mat() { return data_; }
  const Matrix& mat() const { return data_; }

  std::span<Scalar> flat() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> flat() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Scalar& operator[](Index i) { return data_.data()[i]; }
  Scalar operator[](Index i) const { return data_.data()[i]; }

  Scalar item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
    return data_(0, 0);
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    Matrix m = Eigen::Map<const Matrix>(data_.data(), rows_for(shape), cols_for(shape));
    return BasicTensor(std::move(shape), std::move(m));
  }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && std::equal(a.flat().begin(), a.flat().end(), b.flat().begin());
  }

 private:
  static Index cols_for(const Shape& s) { return s.empty() ? 1 : s.back(); }
  static Index rows_for(const Shape& s) {
    if (s.empty()) return 1;
    return std::accumulate(s.begin(), s.end() - 1, Index{1}, std::multiplies<>());
  }

  void validate_shape() const {
    for (Index d : shape_) {
      if (d < 0) throw DimensionError("negative dimension in shape " + shape_string(shape_));
    }
  }

  Shape shape_;
  Matrix data_;
  bool requires_grad_ = false;
};

using Tensor = BasicTensor<double>;
using Matrix = RowMatrix<double>;

}  // namespace st5

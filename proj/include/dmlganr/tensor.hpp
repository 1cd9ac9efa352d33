#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dmlganr/errors.hpp"

namespace dmlganr {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor of rank 1 to 4 backed by an Eigen vector.
///
/// Rank 1 holds vectors, rank 2 matrices (N x D batches), rank 3 CHW images
/// and rank 4 NCHW batches or OIHW kernels. The flat storage is exposed
/// through `vec()` and matrix maps so the math stays in Eigen expressions.
template <typename Scalar_>
class BasicTensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  BasicTensor() : shape_{0} {}

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_shape();
    data_ = Vector::Constant(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values)
      : BasicTensor(std::move(shape), Vector(Eigen::Map<const Vector>(
                                          values.begin(), static_cast<Index>(values.size())))) {}

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  static BasicTensor from_matrix(const Eigen::Ref<const RowMatrix<Scalar>>& m) {
    BasicTensor t({m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }

  static BasicTensor from_vector(const Eigen::Ref<const Vector>& v) {
    return BasicTensor({v.size()}, Vector(v));
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }

  /// First axis as rows, remaining axes flattened into columns.
  MatrixMap matrix() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), rows(), cols()); }

  /// Arbitrary row-major reinterpretation of the flat storage.
  MatrixMap matrix(Index r, Index c) {
    check_view(r, c);
    return MatrixMap(data_.data(), r, c);
  }
  ConstMatrixMap matrix(Index r, Index c) const {
    check_view(r, c);
    return ConstMatrixMap(data_.data(), r, c);
  }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index i, Index j) { return data_[i * shape_[1] + j]; }
  Scalar operator()(Index i, Index j) const { return data_[i * shape_[1] + j]; }
  Scalar& operator()(Index c, Index y, Index x) { return data_[(c * shape_[1] + y) * shape_[2] + x]; }
  Scalar operator()(Index c, Index y, Index x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  Scalar& operator()(Index n, Index c, Index y, Index x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  Scalar operator()(Index n, Index c, Index y, Index x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  /// Copy of the sub-tensor at index `n` along the leading axis.
  BasicTensor slice(Index n) const {
    if (rank() < 2 || n < 0 || n >= shape_[0]) throw DimensionError("slice index out of range");
    Shape inner(shape_.begin() + 1, shape_.end());
    const Index stride = shape_size(inner);
    return BasicTensor(std::move(inner), Vector(data_.segment(n * stride, stride)));
  }

  void set_slice(Index n, const BasicTensor& part) {
    const Index stride = size() / shape_[0];
    if (part.size() != stride) throw DimensionError("slice size mismatch");
    data_.segment(n * stride, stride) = part.vec();
  }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  bool all_finite() const { return data_.allFinite(); }

  bool operator==(const BasicTensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Index rows() const { return shape_.empty() ? 1 : shape_[0]; }
  Index cols() const { return shape_.empty() || shape_[0] == 0 ? 0 : size() / shape_[0]; }

  void check_shape() const {
    if (shape_.empty() || shape_.size() > 4) {
      throw DimensionError("tensor rank must be 1..4, got " + std::to_string(shape_.size()));
    }
    for (Index e : shape_) {
      if (e < 0) throw DimensionError("negative extent in shape " + shape_string(shape_));
    }
  }

  void check_view(Index r, Index c) const {
    if (r * c != size()) throw DimensionError("matrix view does not cover tensor storage");
  }

  Shape shape_;
  Vector data_;
};

using Tensor = BasicTensor<double>;

template <typename Scalar>
Scalar dot(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.size() != b.size()) throw DimensionError("dot: size mismatch");
  return a.vec().dot(b.vec());
}

template <typename Scalar>
void require_finite(const BasicTensor<Scalar>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value produced");
}

}  // namespace dmlganr

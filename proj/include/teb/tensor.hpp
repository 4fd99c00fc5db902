#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "teb/errors.hpp"

namespace teb {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;

template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ')';
  return os.str();
}

/// Dense row-major n-d array. The first axis is the batch axis by convention.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  explicit Tensor(Shape shape, S fill = S(0))
      : shape_(std::move(shape)), data_(Vec<S>::Constant(shape_size(shape_), fill)) {}

  Tensor(Shape shape, Vec<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(shape_size(shape_) == data_.size(),
            "tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                shape_str(shape_));
  }

  static Tensor from(Shape shape, std::initializer_list<S> values) {
    Vec<S> v(static_cast<Index>(values.size()));
    Index i = 0;
    for (S x : values) {
      v[i++] = x;
    }
    return Tensor(std::move(shape), std::move(v));
  }

  static Tensor scalar(S value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  /// Number of rows when viewed as (dim0, rest).
  Index rows() const { return shape_.empty() ? 1 : shape_[0]; }
  Index cols() const { return rows() == 0 ? 0 : size() / rows(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  S& operator[](Index i) { return data_[i]; }
  S operator[](Index i) const { return data_[i]; }

  Vec<S>& flat() { return data_; }
  const Vec<S>& flat() const { return data_; }

  MatMap<S> mat() { return MatMap<S>(data_.data(), rows(), cols()); }
  ConstMatMap<S> mat() const { return ConstMatMap<S>(data_.data(), rows(), cols()); }
  MatMap<S> mat(Index r, Index c) {
    require(r * c == size(), "bad matrix view");
    return MatMap<S>(data_.data(), r, c);
  }
  ConstMatMap<S> mat(Index r, Index c) const {
    require(r * c == size(), "bad matrix view");
    return ConstMatMap<S>(data_.data(), r, c);
  }

  Tensor reshaped(Shape shape) const {
    require(shape_size(shape) == size(),
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  /// Row `i` along the first axis as a tensor with the remaining shape.
  Tensor row(Index i) const {
    Shape rest(shape_.begin() + 1, shape_.end());
    if (rest.empty()) {
      rest = {1};
    }
    return Tensor(rest, Vec<S>(data_.segment(i * cols(), cols())));
  }

  /// Rows selected by index along the first axis.
  Tensor take_rows(const std::vector<Index>& idx) const {
    Shape out_shape = shape_;
    out_shape[0] = static_cast<Index>(idx.size());
    Tensor out(out_shape);
    const Index c = cols();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.data_.segment(static_cast<Index>(k) * c, c) = data_.segment(idx[k] * c, c);
    }
    return out;
  }

  template <typename T>
  Tensor<T> cast() const {
    return Tensor<T>(shape_, data_.template cast<T>());
  }

  void set_zero() { data_.setZero(); }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Vec<S> data_;
};

}  // namespace teb

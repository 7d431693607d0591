#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparsemt/rng.hpp"

namespace sparsemt {

template <typename S>
using MatrixMap =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatrixMap = Eigen::Map<
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using VectorMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

// Dense row-major tensor. Copies are shallow (shared storage); tensors are
// treated as immutable once produced by an op, mutation is reserved for
// parameter updates between training steps.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::shared_ptr<std::vector<S>> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_->size() != shape_numel(shape_))
      throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::make_shared<std::vector<S>>(n, S(0)));
  }

  static Tensor full(Shape shape, S value) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::make_shared<std::vector<S>>(n, value));
  }

  static Tensor from(Shape shape, std::vector<S> values) {
    return Tensor(std::move(shape), std::make_shared<std::vector<S>>(std::move(values)));
  }

  static Tensor scalar(S value) { return full({1}, value); }

  static Tensor uniform(Shape shape, S lo, S hi, RngStream& rng) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : *t.data_) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor gaussian(Shape shape, S mean, S stddev, RngStream& rng) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : *t.data_) v = static_cast<S>(mean + stddev * rng.next_gaussian());
    return t;
  }

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  S* data() { return data_->data(); }
  const S* data() const { return data_->data(); }
  std::vector<S>& vec() { return *data_; }
  const std::vector<S>& vec() const { return *data_; }
  const std::shared_ptr<std::vector<S>>& storage() const { return data_; }

  S& operator[](std::size_t i) { return (*data_)[i]; }
  S operator[](std::size_t i) const { return (*data_)[i]; }

  // deep copy
  Tensor clone() const {
    return Tensor(shape_, std::make_shared<std::vector<S>>(*data_));
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                                  ": element count mismatch");
    return Tensor(std::move(shape), data_);
  }

  // view the tensor as a rows x cols row-major matrix
  MatrixMap<S> as_matrix(int rows, int cols) {
    check_matrix(rows, cols);
    return MatrixMap<S>(data(), rows, cols);
  }
  ConstMatrixMap<S> as_matrix(int rows, int cols) const {
    check_matrix(rows, cols);
    return ConstMatrixMap<S>(data(), rows, cols);
  }

  // rank-2 tensors only
  MatrixMap<S> as_matrix() { return as_matrix(rows2d(), cols2d()); }
  ConstMatrixMap<S> as_matrix() const { return as_matrix(rows2d(), cols2d()); }

  VectorMap<S> as_vector() { return VectorMap<S>(data(), static_cast<Eigen::Index>(numel())); }
  ConstVectorMap<S> as_vector() const {
    return ConstVectorMap<S>(data(), static_cast<Eigen::Index>(numel()));
  }

  bool all_finite() const {
    for (const S& v : *data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out = Tensor<T>::zeros(shape_);
    for (std::size_t i = 0; i < numel(); ++i) out[i] = static_cast<T>((*data_)[i]);
    return out;
  }

 private:
  int rows2d() const {
    if (rank() != 2) throw std::invalid_argument("expected rank-2 tensor, got " + shape_str(shape_));
    return shape_[0];
  }
  int cols2d() const { return shape_[1]; }
  void check_matrix(int rows, int cols) const {
    if (static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) != numel())
      throw std::invalid_argument("matrix view " + std::to_string(rows) + "x" +
                                  std::to_string(cols) + " does not cover tensor " +
                                  shape_str(shape_));
  }

  Shape shape_;
  std::shared_ptr<std::vector<S>> data_;
};

}  // namespace sparsemt

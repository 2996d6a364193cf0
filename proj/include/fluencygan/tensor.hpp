#pragma once

#include <Eigen/Core>

#include <deque>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fluencygan/errors.hpp"
#include "fluencygan/rng.hpp"

namespace fluencygan {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);

inline Eigen::Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1},
                         [](Eigen::Index acc, int d) { return acc * d; });
}

/// Rows of the matrix view: product of every dimension but the last.
inline Eigen::Index shape_rows(const Shape& shape) {
  return shape.empty() ? 1 : shape_size(shape) / shape.back();
}

inline Eigen::Index shape_cols(const Shape& shape) { return shape.empty() ? 1 : shape.back(); }

/// Dense n-dimensional array of Scalar in row-major order.
///
/// Storage is a row-major Eigen matrix whose column count is the last
/// dimension and whose row count is the product of the leading dimensions, so
/// a [B, L, E] tensor is viewed as a (B*L) x E matrix. The gradient slot is
/// only allocated for tensors that require gradients.
template <typename Scalar>
class Tensor {
 public:
  using Matrix = RowMatrix<Scalar>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    value_ = Matrix::Zero(shape_rows(shape_), shape_cols(shape_));
  }

  Tensor(Shape shape, std::span<const Scalar> values) : Tensor(std::move(shape)) {
    if (static_cast<Eigen::Index>(values.size()) != value_.size()) {
      throw DimensionError("tensor of shape " + shape_string(shape_) + " cannot hold " +
                           std::to_string(values.size()) + " values");
    }
    std::copy(values.begin(), values.end(), value_.data());
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), std::span<const Scalar>(values.begin(), values.size())) {}

  Tensor(Shape shape, Matrix value) : shape_(std::move(shape)), value_(std::move(value)) {
    check_shape(shape_);
    if (value_.rows() != shape_rows(shape_) || value_.cols() != shape_cols(shape_)) {
      throw DimensionError("matrix " + std::to_string(value_.rows()) + "x" +
                           std::to_string(value_.cols()) + " does not match shape " +
                           shape_string(shape_));
    }
  }

  static Tensor from_matrix(Matrix m) {
    Shape s{static_cast<int>(m.rows()), static_cast<int>(m.cols())};
    return Tensor(std::move(s), std::move(m));
  }

  const Shape& shape() const { return shape_; }
  Eigen::Index size() const { return value_.size(); }
  int dim(int axis) const { return shape_.at(axis < 0 ? shape_.size() + axis : axis); }

  Matrix& matrix() { return value_; }
  const Matrix& matrix() const { return value_; }
  std::span<Scalar> values() { return {value_.data(), static_cast<std::size_t>(value_.size())}; }
  std::span<const Scalar> values() const {
    return {value_.data(), static_cast<std::size_t>(value_.size())};
  }
  Scalar& operator[](Eigen::Index i) { return value_.data()[i]; }
  Scalar operator[](Eigen::Index i) const { return value_.data()[i]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on && grad_.size() != value_.size()) grad_ = Matrix::Zero(value_.rows(), value_.cols());
  }
  bool has_grad() const { return grad_.size() == value_.size() && value_.size() > 0; }
  Matrix& grad() { return grad_; }
  const Matrix& grad() const { return grad_; }
  void zero_grad() {
    if (requires_grad_) grad_.setZero(value_.rows(), value_.cols());
  }

  template <typename To>
  Tensor<To> cast() const {
    Tensor<To> out(shape_, value_.template cast<To>().eval());
    out.set_requires_grad(requires_grad_);
    return out;
  }

 private:
  static void check_shape(const Shape& shape) {
    for (int d : shape) {
      if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_string(shape));
    }
  }

  Shape shape_;
  Matrix value_;
  Matrix grad_;
  bool requires_grad_ = false;
};

/// Named, ordered collection of trainable tensors with stable addresses.
template <typename Scalar>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, Tensor<Scalar>>;

  Tensor<Scalar>& add(std::string name, Shape shape) {
    for (const auto& [n, t] : entries_) {
      if (n == name) throw ContractError("duplicate parameter name '" + name + "'");
    }
    auto& entry = entries_.emplace_back(std::move(name), Tensor<Scalar>(std::move(shape)));
    entry.second.set_requires_grad(true);
    return entry.second;
  }

  Tensor<Scalar>& get(std::string_view name) {
    for (auto& [n, t] : entries_) {
      if (n == name) return t;
    }
    throw ContractError("unknown parameter '" + std::string(name) + "'");
  }
  const Tensor<Scalar>& get(std::string_view name) const {
    return const_cast<ParameterSet*>(this)->get(name);
  }

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  Eigen::Index scalar_count() const {
    Eigen::Index n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

  void init_uniform(Rng& rng, double lo, double hi) {
    for (auto& [name, t] : entries_) {
      for (auto& v : t.values()) v = static_cast<Scalar>(rng.uniform(lo, hi));
    }
  }

  /// Copy values (not gradients) from a set with the same layout.
  template <typename Other>
  void assign_from(const ParameterSet<Other>& other) {
    if (other.size() != size()) throw ContractError("parameter set layouts differ");
    auto it = other.entries().begin();
    for (auto& [name, t] : entries_) {
      if (it->first != name || it->second.shape() != t.shape()) {
        throw ContractError("parameter set layouts differ at '" + name + "'");
      }
      t.matrix() = it->second.matrix().template cast<Scalar>();
      ++it;
    }
  }

 private:
  std::deque<Entry> entries_;
};

}  // namespace fluencygan

#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "spg/errors.hpp"

namespace spg {

/// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
/// Value-like: copies are deep and independent. Rank 1 and 2 cover everything
/// the pipelines need; the shape is kept general for bookkeeping.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string());
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  std::size_t rows() const {
    require_rank2("rows()");
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank2("cols()");
    return shape_[1];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) {
    require_rank2("at(r,c)");
    return data_[r * shape_[1] + c];
  }
  double at(std::size_t r, std::size_t c) const {
    require_rank2("at(r,c)");
    return data_[r * shape_[1] + c];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool requires_grad() const { return requires_grad_; }

  Tensor& set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on) {
      grad_.assign(data_.size(), 0.0);
    } else {
      grad_.clear();
    }
    return *this;
  }

  bool has_grad() const { return requires_grad_ && grad_.size() == data_.size(); }

  std::vector<double>& grad() {
    if (!has_grad()) throw TrainingError("tensor has no gradient buffer");
    return grad_;
  }
  const std::vector<double>& grad() const {
    if (!has_grad()) throw TrainingError("tensor has no gradient buffer");
    return grad_;
  }

  void zero_grad() {
    if (requires_grad_) grad_.assign(data_.size(), 0.0);
  }

  bool all_finite() const {
    for (double x : data_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_string() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) os << "x";
      os << shape_[i];
    }
    os << ")";
    return os.str();
  }

  double l2_norm() const {
    double s = 0.0;
    for (double x : data_) s += x * x;
    return std::sqrt(s);
  }

private:
  static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive");
      n *= e;
    }
    return n;
  }

  void require_rank2(const char* where) const {
    if (shape_.size() != 2) {
      throw DimensionError(std::string(where) + " requires a rank-2 tensor, got " + shape_string());
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace spg

#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

#include "glyco/rng.hpp"

namespace glyco {

// Dense rank-2 tensor of doubles, row-major. Scalars are 1x1, row vectors
// 1xN. Everything the model touches is one of these.
class Tensor {
 public:
  Tensor() : rows_(0), cols_(0) {}
  Tensor(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), v_(std::size_t(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("negative shape");
  }
  Tensor(int rows, int cols, std::vector<double> values)
      : rows_(rows), cols_(cols), v_(std::move(values)) {
    if (std::size_t(rows) * cols != v_.size())
      throw std::invalid_argument("shape/buffer mismatch");
  }

  static Tensor scalar(double x) { return Tensor(1, 1, {x}); }
  static Tensor row(std::vector<double> values) {
    int n = int(values.size());
    return Tensor(1, n, std::move(values));
  }

  static Tensor randn(int rows, int cols, Rng& rng, double sd = 1.0) {
    Tensor t(rows, cols);
    for (auto& x : t.v_) x = sd * rng.normal();
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }
  std::vector<int> shape() const { return {rows_, cols_}; }

  double& operator()(int r, int c) { return v_[std::size_t(r) * cols_ + c]; }
  double operator()(int r, int c) const {
    return v_[std::size_t(r) * cols_ + c];
  }
  double& at(std::size_t i) { return v_[i]; }
  double at(std::size_t i) const { return v_[i]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  std::vector<double>& buffer() { return v_; }
  const std::vector<double>& buffer() const { return v_; }

  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void fill(double x) {
    for (auto& e : v_) e = x;
  }

  double item() const {
    if (v_.size() != 1) throw std::logic_error("item() on non-scalar tensor");
    return v_[0];
  }

 private:
  int rows_, cols_;
  std::vector<double> v_;
};

}  // namespace glyco

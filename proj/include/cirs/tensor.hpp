#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cirs/rng.hpp"

namespace cirs::nn {

// Dense row-major tensor of doubles. Rank 1 or 2 in practice.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    data_.assign(check_shape(), 0.0);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (check_shape() != data_.size())
      throw std::invalid_argument("tensor: shape/data size mismatch");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  static Tensor uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = rng.uniform(lo, hi);
    return t;
  }

  static Tensor normal(std::vector<std::size_t> shape, double mean, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = rng.normal(mean, stddev);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : 1; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_.at(r * cols() + c); }
  double at(std::size_t r, std::size_t c) const { return data_.at(r * cols() + c); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  void fill(double v) {
    for (double& x : data_) x = v;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  std::size_t check_shape() const {
    if (shape_.empty()) throw std::invalid_argument("tensor: empty shape");
    std::size_t n = 1;
    for (const std::size_t d : shape_) {
      if (d == 0) throw std::invalid_argument("tensor: zero dimension");
      n *= d;
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace cirs::nn

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cirs/params.hpp"

namespace cirs::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction; epsilon is added outside the square root.
class Adam {
 public:
  explicit Adam(ParamStore& store, AdamConfig cfg = {}) : store_(&store), cfg_(cfg) {
    if (cfg.lr <= 0.0) throw std::invalid_argument("adam: lr must be positive");
    if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0) {
      throw std::invalid_argument("adam: betas must lie in [0, 1)");
    }
    for (std::size_t i = 0; i < store.size(); ++i) {
      m_.emplace_back(store.value(i).shape());
      v_.emplace_back(store.value(i).shape());
    }
  }

  void step() {
    if (m_.size() != store_->size()) {
      throw std::runtime_error("adam: parameter store changed size after optimizer creation");
    }
    t_ += 1;
    double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < store_->size(); ++p) {
      Tensor& value = store_->value(p);
      const Tensor& grad = store_->grad(p);
      Tensor& m = m_[p];
      Tensor& v = v_[p];
      for (std::size_t i = 0; i < value.size(); ++i) {
        double g = grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        double mhat = m[i] / c1;
        double vhat = v[i] / c2;
        value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

  void set_lr(double lr) {
    if (lr <= 0.0) throw std::invalid_argument("adam: lr must be positive");
    cfg_.lr = lr;
  }

  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  ParamStore* store_;
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace cirs::nn

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cirs/tensor.hpp"

namespace cirs::nn {

// Named leaf tensors with gradient slots. Graphs reference entries by index;
// gradients accumulate here across backward passes until zero_grads().
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor init) {
    if (by_name_.count(name)) throw std::invalid_argument("params: duplicate name " + name);
    by_name_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    grads_.emplace_back(Tensor(init.shape()));
    values_.push_back(std::move(init));
    return names_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }

  Tensor& value(std::size_t i) { return values_.at(i); }
  const Tensor& value(std::size_t i) const { return values_.at(i); }
  Tensor& grad(std::size_t i) { return grads_.at(i); }
  const Tensor& grad(std::size_t i) const { return grads_.at(i); }

  std::optional<std::size_t> find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index(std::string_view name) const {
    auto i = find(name);
    if (!i) throw std::invalid_argument("params: unknown name " + std::string(name));
    return *i;
  }

  void zero_grads() {
    for (Tensor& g : grads_) g.fill(0.0);
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const Tensor& v : values_) n += v.size();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

}  // namespace cirs::nn

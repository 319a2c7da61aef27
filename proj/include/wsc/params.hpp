#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wsc/tensor.hpp"

namespace wsc {

/// Ordered registry of trainable tensors keyed by hierarchical dotted names
/// (e.g. "encoder.dense1.conv_a.weight"). Registration order is stable and
/// defines checkpoint record order.
template <class T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    value.set_requires_grad(true);
    index_.emplace(name, items_.size());
    items_.emplace_back(name, value);
    return value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return items_[it->second].second;
  }
  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return items_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor<T>>>& items() { return items_; }

  std::size_t size() const { return items_.size(); }
  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : items_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
  std::map<std::string, std::size_t> index_;
};

namespace init {

/// He-style normal, stddev sqrt(2 / fan_in), for convolutions followed by ReLU paths.
template <class T>
Tensor<T> conv_weight(Shape shape, std::size_t fan_in, Rng& rng) {
  return Tensor<T>::randn(std::move(shape), rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

/// stddev 1/sqrt(fan_in), for token projections.
template <class T>
Tensor<T> linear_weight(std::size_t in, std::size_t out, Rng& rng) {
  return Tensor<T>::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
}

}  // namespace init

}  // namespace wsc

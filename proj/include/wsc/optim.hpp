#pragma once

// AdamW with bias correction and decoupled weight decay.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsc/params.hpp"

namespace wsc {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// Rescale gradients so their global L2 norm is at most this; 0 disables.
  double max_grad_norm = 0.0;
};

template <class T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(ParamStore<T>& params, AdamWOptions opt) : opt_(opt) {
    for (const auto& [_, p] : params.items()) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  const AdamWOptions& options() const { return opt_; }
  std::size_t step_count() const { return t_; }

  /// One update of every parameter from its accumulated gradient. Parameters
  /// without a gradient are treated as having a zero gradient.
  void step(ParamStore<T>& params) {
    auto& items = params.items();
    if (items.size() != m_.size()) throw std::invalid_argument("optimizer built for a different parameter set");
    double clip = 1.0;
    if (opt_.max_grad_norm > 0.0) {
      double sq = 0.0;
      for (auto& [_, p] : items)
        if (p.has_grad())
          for (auto g : p.grad()) sq += double(g) * g;
      const double norm = std::sqrt(sq);
      if (norm > opt_.max_grad_norm) clip = opt_.max_grad_norm / norm;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
    for (std::size_t k = 0; k < items.size(); ++k) {
      auto& p = items[k].second;
      auto theta = p.mutable_data();
      if (m_[k].size() != theta.size()) throw std::invalid_argument("optimizer state shape mismatch for " + items[k].first);
      const bool has = p.has_grad();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = has ? double(p.grad()[i]) * clip : 0.0;
        const double m = opt_.beta1 * m_[k][i] + (1.0 - opt_.beta1) * g;
        const double v = opt_.beta2 * v_[k][i] + (1.0 - opt_.beta2) * g * g;
        m_[k][i] = static_cast<T>(m);
        v_[k][i] = static_cast<T>(v);
        const double mhat = m / bc1, vhat = v / bc2;
        const double th = theta[i];
        theta[i] = static_cast<T>(th - opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps) - opt_.lr * opt_.weight_decay * th);
      }
    }
  }

  // state access for checkpointing
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void set_step_count(std::size_t t) { t_ = t; }

 private:
  AdamWOptions opt_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace wsc

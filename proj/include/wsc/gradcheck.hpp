#pragma once

// Central finite-difference gradient checking at float64.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "wsc/ops.hpp"
#include "wsc/tensor.hpp"

namespace wsc {

struct GradCheckOptions {
  double eps = 1e-6;
  /// Denominator floor of the relative error, so that near-zero gradients are
  /// compared absolutely.
  double scale_floor = 1e-3;
  /// 0 checks every coordinate; otherwise a seeded sample per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose perturbation flipped the sign of some ReLU input.
  std::size_t skipped_kinks = 0;
};

/// Compares the analytic gradient of scalar `f` with respect to every input
/// against (f(x+eps) - f(x-eps)) / (2 eps). Inputs must be leaves; they are
/// marked requires_grad and restored to their original values.
template <class F>
GradCheckResult grad_check(F&& f, std::vector<TensorD> inputs, const GradCheckOptions& opt = {}) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  {
    TensorD loss = f();
    loss.backward();
  }
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) analytic.emplace_back(in.grad().begin(), in.grad().end());

  auto eval = [&](std::vector<signed char>& signs) {
    NoGradGuard ng;
    signs.clear();
    detail::relu_sign_log() = &signs;
    const double v = f().item();
    detail::relu_sign_log() = nullptr;
    return v;
  };

  GradCheckResult result;
  Rng rng(opt.seed);
  std::vector<signed char> plus_signs, minus_signs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    std::vector<std::size_t> coords(data.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords_per_input && coords.size() > opt.max_coords_per_input) {
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(opt.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (auto i : coords) {
      const double orig = data[i];
      data[i] = orig + opt.eps;
      const double fp = eval(plus_signs);
      data[i] = orig - opt.eps;
      const double fm = eval(minus_signs);
      data[i] = orig;
      if (plus_signs != minus_signs) {
        ++result.skipped_kinks;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.scale_floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace wsc

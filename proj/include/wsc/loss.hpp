#pragma once

// Multi-class soft Dice loss over foreground classes.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "wsc/tensor.hpp"
#include "wsc/volume.hpp"

namespace wsc {

inline constexpr double kDiceSmooth = 1e-5;

/// One-hot encoding [N, classes, D, H, W] of a batch of label maps.
template <class T>
Tensor<T> one_hot(const std::vector<const LabelMap*>& labels, std::size_t num_classes) {
  if (labels.empty()) throw ShapeError("one_hot: empty batch");
  const auto ext = labels.front()->extents;
  const std::size_t V = ext[0] * ext[1] * ext[2];
  std::vector<T> data(labels.size() * num_classes * V, T(0));
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n]->extents != ext) throw ShapeError("one_hot: label maps in a batch differ in extent");
    for (std::size_t v = 0; v < V; ++v) {
      const auto c = labels[n]->data[v];
      if (c >= num_classes) throw ShapeError("one_hot: label " + std::to_string(c) + " out of range");
      data[(n * num_classes + c) * V + v] = T(1);
    }
  }
  return Tensor<T>::from_data({labels.size(), num_classes, ext[0], ext[1], ext[2]}, std::move(data));
}

/// 1 - mean_c (2 sum p g + eps) / (sum p + sum g + eps) over classes 1..C-1,
/// sums pooled over batch and voxels.
template <class T>
Tensor<T> soft_dice_loss(const Tensor<T>& probs, const Tensor<T>& target) {
  if (probs.rank() != 5) throw ShapeError("soft_dice_loss expects [N, classes, D, H, W], got [" + shape_str(probs.shape()) + "]");
  if (probs.shape() != target.shape())
    throw ShapeError("soft_dice_loss: probs [" + shape_str(probs.shape()) + "] vs target [" +
                     shape_str(target.shape()) + "]");
  const std::size_t N = probs.dim(0), C = probs.dim(1), V = probs.numel() / (N * C);
  if (C < 2) throw ShapeError("soft_dice_loss needs at least one foreground class");
  const auto p = probs.data();
  const auto g = target.data();
  std::vector<double> inter(C, 0.0), denom(C, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 1; c < C; ++c) {
      const std::size_t off = (n * C + c) * V;
      double pg = 0.0, s = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        pg += double(p[off + v]) * g[off + v];
        s += double(p[off + v]) + g[off + v];
      }
      inter[c] += pg;
      denom[c] += s;
    }
  double total = 0.0;
  for (std::size_t c = 1; c < C; ++c) total += (2.0 * inter[c] + kDiceSmooth) / (denom[c] + kDiceSmooth);
  const double loss = 1.0 - total / static_cast<double>(C - 1);
  return Tensor<T>::make_result({1}, {static_cast<T>(loss)}, {probs}, [probs, target, inter, denom](auto& self) {
    auto& pn = probs.node();
    pn.ensure_grad();
    const auto& gd = target.node().data;
    const std::size_t N = pn.shape[0], C = pn.shape[1], V = pn.data.size() / (N * C);
    const double up = self.grad[0] / static_cast<double>(C - 1);
    for (std::size_t c = 1; c < C; ++c) {
      // d/dp of -(2I + e)/(S + e) = -(2g (S + e) - (2I + e)) / (S + e)^2
      const double S = denom[c] + kDiceSmooth, num = 2.0 * inter[c] + kDiceSmooth;
      const double a = -2.0 / S, b = num / (S * S);
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * V;
        for (std::size_t v = 0; v < V; ++v) pn.grad[off + v] += static_cast<T>(up * (a * gd[off + v] + b));
      }
    }
  });
}

}  // namespace wsc

#pragma once

// Convolutional building blocks of the encoder-decoder.
//
//   ConvBlock:  y = ReLU(GN(Conv3(x)))                     1 -> C channels
//   DenseBlock: x1 = Conv3(ReLU(GN(x))); x2 = Conv3(ReLU(GN(x1)));
//               y = Conv1(Concat(x1, x2))                  2C -> C projection
//   ResBlock:   x1, x2 as above; y = Conv3(x1 + x2)
//   PatchMerge: 2x2x2 space-to-channel (C -> 8C, half extent), Conv1 8C -> 2C
//   UpBlock:    kernel-2 stride-2 transposed conv, C -> C/2, double extent
//
// Every block registers its parameters under `prefix` in a ParamStore.

#include <cstddef>
#include <string>
#include <vector>

#include "wsc/conv.hpp"
#include "wsc/ops.hpp"
#include "wsc/params.hpp"

namespace wsc {

template <class T>
struct Conv3dLayer {
  Tensor<T> weight, bias;
  std::size_t kernel = 3, padding = 1;

  Conv3dLayer() = default;
  Conv3dLayer(ParamStore<T>& ps, const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t k,
              Rng& rng)
      : kernel(k), padding(k / 2) {
    weight = ps.add(prefix + ".weight", init::conv_weight<T>({cout, cin, k, k, k}, cin * k * k * k, rng));
    bias = ps.add(prefix + ".bias", Tensor<T>::zeros({cout}));
  }

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  Tensor<T> operator()(const Tensor<T>& x) const { return conv3d(x, weight, bias, 1, padding); }
};

template <class T>
struct GroupNormLayer {
  Tensor<T> gamma, beta;
  std::size_t groups = 8;

  GroupNormLayer() = default;
  GroupNormLayer(ParamStore<T>& ps, const std::string& prefix, std::size_t channels, std::size_t g) : groups(g) {
    if (g == 0 || channels % g != 0)
      throw ShapeError(prefix + ": " + std::to_string(channels) + " channels not divisible by " + std::to_string(g) +
                       " norm groups");
    gamma = ps.add(prefix + ".gamma", Tensor<T>::ones({channels}));
    beta = ps.add(prefix + ".beta", Tensor<T>::zeros({channels}));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return group_norm(x, groups, gamma, beta); }
};

namespace detail {

inline void require_channels(const Shape& s, std::size_t c, const std::string& who) {
  if (s.size() != 5) throw ShapeError(who + ": expects [N, C, D, H, W]");
  if (s[1] != c)
    throw ShapeError(who + ": expected " + std::to_string(c) + " channels, got " + std::to_string(s[1]));
}

}  // namespace detail

template <class T>
struct ConvBlock {
  Conv3dLayer<T> conv;
  GroupNormLayer<T> norm;
  std::string name;

  ConvBlock() = default;
  ConvBlock(ParamStore<T>& ps, const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t groups,
            Rng& rng)
      : conv(ps, prefix + ".conv", cin, cout, 3, rng), norm(ps, prefix + ".norm", cout, groups), name(prefix) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    detail::require_channels(x.shape(), conv.in_channels(), name);
    return relu(norm(conv(x)));
  }
};

template <class T>
struct DenseBlock {
  GroupNormLayer<T> norm_a;
  Conv3dLayer<T> conv_a;
  GroupNormLayer<T> norm_b;
  Conv3dLayer<T> conv_b, proj;
  std::size_t channels = 0;
  std::string name;

  DenseBlock() = default;
  DenseBlock(ParamStore<T>& ps, const std::string& prefix, std::size_t c, std::size_t groups, Rng& rng)
      : norm_a(ps, prefix + ".norm_a", c, groups),
        conv_a(ps, prefix + ".conv_a", c, c, 3, rng),
        norm_b(ps, prefix + ".norm_b", c, groups),
        conv_b(ps, prefix + ".conv_b", c, c, 3, rng),
        proj(ps, prefix + ".proj", 2 * c, c, 1, rng),
        channels(c),
        name(prefix) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    detail::require_channels(x.shape(), channels, name);
    auto x1 = conv_a(relu(norm_a(x)));
    auto x2 = conv_b(relu(norm_b(x1)));
    return proj(concat<T>({x1, x2}, 1));
  }
};

template <class T>
struct ResBlock {
  GroupNormLayer<T> norm_a;
  Conv3dLayer<T> conv_a;
  GroupNormLayer<T> norm_b;
  Conv3dLayer<T> conv_b, conv_out;
  std::size_t channels = 0;
  std::string name;

  ResBlock() = default;
  ResBlock(ParamStore<T>& ps, const std::string& prefix, std::size_t c, std::size_t groups, Rng& rng)
      : norm_a(ps, prefix + ".norm_a", c, groups),
        conv_a(ps, prefix + ".conv_a", c, c, 3, rng),
        norm_b(ps, prefix + ".norm_b", c, groups),
        conv_b(ps, prefix + ".conv_b", c, c, 3, rng),
        conv_out(ps, prefix + ".conv_out", c, c, 3, rng),
        channels(c),
        name(prefix) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    detail::require_channels(x.shape(), channels, name);
    auto x1 = conv_a(relu(norm_a(x)));
    auto x2 = conv_b(relu(norm_b(x1)));
    return conv_out(add(x1, x2));
  }
};

/// [N, C, D, H, W] -> [N, 8C, D/2, H/2, W/2]. Channel index is
/// offset * C + c with offset = 4*dz + 2*dy + dx of the voxel inside its 2x2x2 cell.
template <class T>
Tensor<T> space_to_depth(const Tensor<T>& x) {
  detail::check_5d(x.shape(), "space_to_depth");
  const auto N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  if (D % 2 || H % 2 || W % 2)
    throw ShapeError("patch merge: spatial extents must be even, got " + shape_str({D, H, W}));
  auto r = reshape(x, {N, C, D / 2, 2, H / 2, 2, W / 2, 2});
  r = permute(r, {0, 3, 5, 7, 1, 2, 4, 6});
  return reshape(r, {N, 8 * C, D / 2, H / 2, W / 2});
}

/// Inverse of space_to_depth.
template <class T>
Tensor<T> depth_to_space(const Tensor<T>& x) {
  detail::check_5d(x.shape(), "depth_to_space");
  const auto N = x.dim(0), C8 = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  if (C8 % 8) throw ShapeError("depth_to_space: channel count must be a multiple of 8");
  const auto C = C8 / 8;
  auto r = reshape(x, {N, 2, 2, 2, C, D, H, W});
  r = permute(r, {0, 4, 5, 1, 6, 2, 7, 3});
  return reshape(r, {N, C, 2 * D, 2 * H, 2 * W});
}

template <class T>
struct PatchMerge {
  Conv3dLayer<T> proj;
  std::size_t channels = 0;
  std::string name;

  PatchMerge() = default;
  PatchMerge(ParamStore<T>& ps, const std::string& prefix, std::size_t c, Rng& rng)
      : proj(ps, prefix + ".proj", 8 * c, 2 * c, 1, rng), channels(c), name(prefix) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    detail::require_channels(x.shape(), channels, name);
    return proj(space_to_depth(x));
  }
};

template <class T>
struct UpBlock {
  Tensor<T> weight, bias;
  std::string name;

  UpBlock() = default;
  UpBlock(ParamStore<T>& ps, const std::string& prefix, std::size_t c, Rng& rng) : name(prefix) {
    if (c % 2) throw ShapeError(prefix + ": up block needs an even channel count, got " + std::to_string(c));
    weight = ps.add(prefix + ".weight", init::conv_weight<T>({c, c / 2, 2, 2, 2}, c, rng));
    bias = ps.add(prefix + ".bias", Tensor<T>::zeros({c / 2}));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    detail::require_channels(x.shape(), weight.dim(0), name);
    return conv_transpose3d(x, weight, bias, 2);
  }
};

/// Decoder/encoder skip fusion by element-wise sum.
template <class T>
Tensor<T> skip_fuse(const Tensor<T>& decoder, const Tensor<T>& encoder_skip) {
  detail::require_same_shape(decoder.shape(), encoder_skip.shape(), "skip_fuse");
  return add(decoder, encoder_skip);
}

}  // namespace wsc

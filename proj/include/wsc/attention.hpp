#pragma once

// Bottleneck attention: 3-D window attention (W), shifted-window attention
// (S) and channel self-attention (C), composed serially into WSC blocks.
//
// Internally the bottleneck works channels-last, [N, D, H, W, C], so every
// voxel is a contiguous token. Public entry points taking [N, C, D, H, W]
// permute on the way in and out.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "wsc/ops.hpp"
#include "wsc/params.hpp"

namespace wsc {

/// Additive bias applied to masked attention logits.
inline constexpr double kMaskBias = -1e4;

/// Bookkeeping for partitioning a D x H x W grid into w^3 windows.
struct WindowLayout {
  std::array<std::size_t, 3> extents{};
  std::size_t window = 2;
  std::size_t shift = 0;
  std::array<std::size_t, 3> windows_per_axis{};
  /// valid[win * T * T + i * T + j]: may token i attend to token j inside
  /// window `win` (in the rolled frame). All true when shift == 0.
  std::vector<bool> valid;

  std::size_t tokens_per_window() const { return window * window * window; }
  std::size_t window_count() const { return windows_per_axis[0] * windows_per_axis[1] * windows_per_axis[2]; }

  static WindowLayout make(std::array<std::size_t, 3> extents, std::size_t window, std::size_t shift = 0) {
    if (window == 0) throw ShapeError("window size must be positive");
    if (shift >= window) throw ShapeError("window shift must be smaller than the window");
    WindowLayout l;
    l.extents = extents;
    l.window = window;
    l.shift = shift;
    for (int a = 0; a < 3; ++a) {
      if (extents[a] % window)
        throw ShapeError("window size " + std::to_string(window) + " does not divide extent " +
                         std::to_string(extents[a]));
      l.windows_per_axis[a] = extents[a] / window;
    }
    const std::size_t T = l.tokens_per_window(), nw = l.window_count();
    l.valid.assign(nw * T * T, true);
    if (shift == 0) return l;
    // Region id per rolled coordinate: [0, E-w), [E-w, E-s), [E-s, E).
    auto region = [&](std::size_t a, std::size_t i) -> std::size_t {
      if (i < extents[a] - window) return 0;
      if (i < extents[a] - shift) return 1;
      return 2;
    };
    std::vector<std::size_t> label(T);
    std::size_t win = 0;
    for (std::size_t wz = 0; wz < l.windows_per_axis[0]; ++wz)
      for (std::size_t wy = 0; wy < l.windows_per_axis[1]; ++wy)
        for (std::size_t wx = 0; wx < l.windows_per_axis[2]; ++wx, ++win) {
          std::size_t t = 0;
          for (std::size_t z = 0; z < window; ++z)
            for (std::size_t y = 0; y < window; ++y)
              for (std::size_t x = 0; x < window; ++x, ++t)
                label[t] = region(0, wz * window + z) * 9 + region(1, wy * window + y) * 3 + region(2, wx * window + x);
          for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < T; ++j) l.valid[(win * T + i) * T + j] = label[i] == label[j];
        }
    return l;
  }

  template <class T>
  std::vector<T> additive_mask() const {
    std::vector<T> m(valid.size());
    for (std::size_t i = 0; i < valid.size(); ++i) m[i] = valid[i] ? T(0) : static_cast<T>(kMaskBias);
    return m;
  }
};

/// Channels-last [N, D, H, W, C] -> [N * nW, w^3, C]. Windows in row-major
/// grid order per sample, tokens row-major inside each window.
template <class T>
Tensor<T> window_partition_cl(const Tensor<T>& x, std::size_t w) {
  if (x.rank() != 5) throw ShapeError("window_partition: expects a rank-5 tensor");
  const auto N = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  if (w == 0 || D % w || H % w || W % w)
    throw ShapeError("window_partition: window " + std::to_string(w) + " does not divide " + shape_str({D, H, W}));
  auto r = reshape(x, {N, D / w, w, H / w, w, W / w, w, C});
  r = permute(r, {0, 1, 3, 5, 2, 4, 6, 7});
  return reshape(r, {N * (D / w) * (H / w) * (W / w), w * w * w, C});
}

/// Inverse of window_partition_cl.
template <class T>
Tensor<T> window_reverse_cl(const Tensor<T>& windows, std::size_t N, std::array<std::size_t, 3> ext, std::size_t w) {
  const auto [D, H, W] = ext;
  const auto C = windows.shape().back();
  auto r = reshape(windows, {N, D / w, H / w, W / w, w, w, w, C});
  r = permute(r, {0, 1, 4, 2, 5, 3, 6, 7});
  return reshape(r, {N, D, H, W, C});
}

template <class T>
Tensor<T> to_channels_last(const Tensor<T>& x) {
  return permute(x, {0, 2, 3, 4, 1});
}
template <class T>
Tensor<T> to_channels_first(const Tensor<T>& x) {
  return permute(x, {0, 4, 1, 2, 3});
}

/// [N, C, D, H, W] -> [N * nW, w^3, C].
template <class T>
Tensor<T> window_partition(const Tensor<T>& x, std::size_t w) {
  if (x.rank() != 5) throw ShapeError("window_partition: expects [N, C, D, H, W]");
  return window_partition_cl(to_channels_last(x), w);
}

/// [N * nW, w^3, C] -> [N, C, D, H, W].
template <class T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::size_t N, std::array<std::size_t, 3> ext, std::size_t w) {
  return to_channels_first(window_reverse_cl(windows, N, ext, w));
}

/// Optional sink for post-softmax attention weights, for inspection in tests.
template <class T>
struct AttentionProbe {
  Shape shape;
  std::vector<T> weights;
};

template <class T>
struct Linear {
  Tensor<T> weight, bias;
  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    weight = ps.add(prefix + ".weight", init::linear_weight<T>(in, out, rng));
    bias = ps.add(prefix + ".bias", Tensor<T>::zeros({out}));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

/// Q/K/V and output projections of one attention sub-layer.
template <class T>
struct AttentionParams {
  Linear<T> qkv, proj;
  std::size_t channels = 0, heads = 1;

  AttentionParams() = default;
  AttentionParams(ParamStore<T>& ps, const std::string& prefix, std::size_t c, std::size_t h, Rng& rng)
      : qkv(ps, prefix + ".qkv", c, 3 * c, rng), proj(ps, prefix + ".proj", c, c, rng), channels(c), heads(h) {
    if (h == 0 || c % h)
      throw ShapeError(prefix + ": " + std::to_string(c) + " channels not divisible by " + std::to_string(h) + " heads");
  }
};

namespace detail {

// tokens [B, T, C] -> q, k, v each [B * heads, T, C / heads]
template <class T>
std::array<Tensor<T>, 3> split_heads_qkv(const AttentionParams<T>& p, const Tensor<T>& tokens) {
  const auto B = tokens.dim(0), L = tokens.dim(1), C = tokens.dim(2);
  if (C != p.channels) throw ShapeError("attention: expected " + std::to_string(p.channels) + " channels");
  const auto h = p.heads, dh = C / h;
  auto qkv = p.qkv(tokens);
  qkv = reshape(qkv, {B, L, 3, h, dh});
  qkv = permute(qkv, {2, 0, 3, 1, 4});  // [3, B, h, L, dh]
  std::array<Tensor<T>, 3> out;
  for (std::size_t i = 0; i < 3; ++i) out[i] = reshape(slice(qkv, 0, i, 1), {B * h, L, dh});
  return out;
}

// [B * heads, T, dh] -> [B, T, C]
template <class T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t B, std::size_t heads) {
  const auto L = x.dim(1), dh = x.dim(2);
  auto r = reshape(x, {B, heads, L, dh});
  r = permute(r, {0, 2, 1, 3});
  return reshape(r, {B, L, heads * dh});
}

template <class T>
void record_probe(AttentionProbe<T>* probe, const Tensor<T>& attn) {
  if (!probe) return;
  probe->shape = attn.shape();
  probe->weights = attn.vec();
}

}  // namespace detail

/// Multi-head self-attention inside each window. windows: [N * nW, T, C].
/// `mask`, when non-empty, is the additive [nW, T, T] logit bias.
template <class T>
Tensor<T> windowed_self_attention(const Tensor<T>& windows, const AttentionParams<T>& p, const std::vector<T>& mask,
                                  std::size_t num_windows, AttentionProbe<T>* probe = nullptr) {
  const auto B = windows.dim(0), L = windows.dim(1);
  const auto h = p.heads, dh = p.channels / p.heads;
  auto [q, k, v] = detail::split_heads_qkv(p, windows);
  auto scores = scale(bmm(q, k, false, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  if (!mask.empty()) {
    scores = reshape(scores, {B, h, L, L});
    scores = add_attention_mask(scores, mask, num_windows);
    scores = reshape(scores, {B * h, L, L});
  }
  auto attn = softmax(scores, 2);
  detail::record_probe(probe, attn);
  return p.proj(detail::merge_heads(bmm(attn, v), B, h));
}

/// Window attention on channels-last x [N, D, H, W, C] with the given layout.
/// When layout.shift > 0 the grid is cyclically rolled by -shift before
/// partitioning and rolled back afterwards; the layout mask blocks pairs
/// that are not neighbours in the unrolled volume.
template <class T>
Tensor<T> window_attention_cl(const Tensor<T>& x, const WindowLayout& layout, const AttentionParams<T>& p,
                              AttentionProbe<T>* probe = nullptr) {
  const auto N = x.dim(0);
  const std::array<std::size_t, 3> ext{x.dim(1), x.dim(2), x.dim(3)};
  if (ext != layout.extents) throw ShapeError("window attention: layout extents do not match input");
  const long s = static_cast<long>(layout.shift);
  Tensor<T> h = s ? roll(x, {0, -s, -s, -s, 0}) : x;
  auto windows = window_partition_cl(h, layout.window);
  std::vector<T> mask;
  if (s) mask = layout.additive_mask<T>();
  auto out = windowed_self_attention(windows, p, mask, layout.window_count(), probe);
  h = window_reverse_cl(out, N, ext, layout.window);
  return s ? roll(h, {0, s, s, s, 0}) : h;
}

/// Channel self-attention on channels-last x [N, D, H, W, C]: per head the
/// Cg x Cg matrix softmax(Q^T K / sqrt(Nt)) mixes channels, with all Nt
/// voxels as the contraction axis.
template <class T>
Tensor<T> channel_attention_cl(const Tensor<T>& x, const AttentionParams<T>& p, AttentionProbe<T>* probe = nullptr) {
  const auto N = x.dim(0), C = x.dim(4);
  const auto nt = x.dim(1) * x.dim(2) * x.dim(3);
  auto tokens = reshape(x, {N, nt, C});
  auto [q, k, v] = detail::split_heads_qkv(p, tokens);  // [N*h, Nt, Cg]
  auto scores = scale(bmm(q, k, true, false), static_cast<T>(1.0 / std::sqrt(static_cast<double>(nt))));
  auto attn = softmax(scores, 2);  // [N*h, Cg, Cg]
  detail::record_probe(probe, attn);
  auto mixed = bmm(v, attn, false, true);  // out[t, i] = sum_j A[i, j] v[t, j]
  auto out = p.proj(detail::merge_heads(mixed, N, p.heads));
  return reshape(out, x.shape());
}

/// window attention, [N, C, D, H, W] in and out (unshifted layout expected).
template <class T>
Tensor<T> window_attention(const Tensor<T>& x, const WindowLayout& layout, const AttentionParams<T>& p,
                           AttentionProbe<T>* probe = nullptr) {
  return to_channels_first(window_attention_cl(to_channels_last(x), layout, p, probe));
}

/// Shifted-window attention with shift floor(w / 2), [N, C, D, H, W] in and out.
template <class T>
Tensor<T> shifted_window_attention(const Tensor<T>& x, const AttentionParams<T>& p, std::size_t w,
                                   AttentionProbe<T>* probe = nullptr) {
  if (w < 2) throw ShapeError("shifted window attention needs window >= 2");
  auto layout = WindowLayout::make({x.dim(2), x.dim(3), x.dim(4)}, w, w / 2);
  return to_channels_first(window_attention_cl(to_channels_last(x), layout, p, probe));
}

template <class T>
Tensor<T> channel_self_attention(const Tensor<T>& x, const AttentionParams<T>& p, AttentionProbe<T>* probe = nullptr) {
  return to_channels_first(channel_attention_cl(to_channels_last(x), p, probe));
}

enum class AttentionKind : char { Window = 'W', Shifted = 'S', Channel = 'C' };

struct WscConfig {
  std::string composition = "WSC";
  std::vector<std::size_t> depths{1, 1, 3, 1};
  std::size_t heads = 8;
  std::size_t mlp_ratio = 4;
  std::size_t window_size = 2;

  void validate() const {
    if (composition.empty()) throw std::invalid_argument("wsc.composition must not be empty");
    for (char ch : composition) {
      if (ch != 'W' && ch != 'S' && ch != 'C')
        throw std::invalid_argument(std::string("wsc.composition: invalid attention kind '") + ch + "'");
      if (ch == 'S' && window_size < 2) throw std::invalid_argument("wsc.composition: S requires window_size >= 2");
    }
    if (depths.empty()) throw std::invalid_argument("wsc.depths must not be empty");
    if (heads == 0) throw std::invalid_argument("wsc.heads must be positive");
    if (mlp_ratio == 0) throw std::invalid_argument("wsc.mlp_ratio must be positive");
    if (window_size == 0) throw std::invalid_argument("wsc.window_size must be positive");
  }
};

/// One pre-norm residual unit: x + Attn(LN(x)), then x + MLP(LN(x)).
template <class T>
struct AttentionUnit {
  AttentionKind kind = AttentionKind::Window;
  Tensor<T> norm1_gamma, norm1_beta, norm2_gamma, norm2_beta;
  AttentionParams<T> attn;
  Linear<T> fc1, fc2;
  std::size_t window = 2;

  AttentionUnit() = default;
  AttentionUnit(ParamStore<T>& ps, const std::string& prefix, AttentionKind k, std::size_t c, const WscConfig& cfg,
                Rng& rng)
      : kind(k), window(cfg.window_size) {
    norm1_gamma = ps.add(prefix + ".norm1.gamma", Tensor<T>::ones({c}));
    norm1_beta = ps.add(prefix + ".norm1.beta", Tensor<T>::zeros({c}));
    attn = AttentionParams<T>(ps, prefix + ".attn", c, cfg.heads, rng);
    norm2_gamma = ps.add(prefix + ".norm2.gamma", Tensor<T>::ones({c}));
    norm2_beta = ps.add(prefix + ".norm2.beta", Tensor<T>::zeros({c}));
    fc1 = Linear<T>(ps, prefix + ".mlp.fc1", c, cfg.mlp_ratio * c, rng);
    fc2 = Linear<T>(ps, prefix + ".mlp.fc2", cfg.mlp_ratio * c, c, rng);
  }

  /// Channels-last in and out.
  Tensor<T> operator()(const Tensor<T>& x, AttentionProbe<T>* probe = nullptr) const {
    auto h = layer_norm(x, norm1_gamma, norm1_beta);
    const std::array<std::size_t, 3> ext{x.dim(1), x.dim(2), x.dim(3)};
    Tensor<T> a;
    switch (kind) {
      case AttentionKind::Window:
        a = window_attention_cl(h, WindowLayout::make(ext, window, 0), attn, probe);
        break;
      case AttentionKind::Shifted:
        a = window_attention_cl(h, WindowLayout::make(ext, window, window / 2), attn, probe);
        break;
      case AttentionKind::Channel:
        a = channel_attention_cl(h, attn, probe);
        break;
    }
    auto y = add(x, a);
    auto m = fc2(gelu(fc1(layer_norm(y, norm2_gamma, norm2_beta))));
    return add(y, m);
  }
};

/// The bottleneck: len(depths) stages, stage i repeating the composition
/// depths[i] times. The default "WSC" with [1, 1, 3, 1] gives six W-S-C blocks.
template <class T>
struct WscBottleneck {
  std::vector<AttentionUnit<T>> units;

  WscBottleneck() = default;
  WscBottleneck(ParamStore<T>& ps, const std::string& prefix, std::size_t channels, const WscConfig& cfg, Rng& rng) {
    cfg.validate();
    for (std::size_t stage = 0; stage < cfg.depths.size(); ++stage)
      for (std::size_t rep = 0; rep < cfg.depths[stage]; ++rep)
        for (char ch : cfg.composition)
          units.emplace_back(ps,
                             prefix + ".stage" + std::to_string(stage) + ".block" + std::to_string(rep) + "." + ch,
                             static_cast<AttentionKind>(ch), channels, cfg, rng);
  }

  /// [N, C, D, H, W] in and out.
  Tensor<T> operator()(const Tensor<T>& x) const {
    auto h = to_channels_last(x);
    for (const auto& u : units) h = u(h);
    return to_channels_first(h);
  }
};

/// A single composition pass (one W-S-C block for "WSC") over [N, C, D, H, W].
template <class T>
Tensor<T> wsc_block(const Tensor<T>& x, const std::vector<AttentionUnit<T>>& units) {
  auto h = to_channels_last(x);
  for (const auto& u : units) h = u(h);
  return to_channels_first(h);
}

}  // namespace wsc

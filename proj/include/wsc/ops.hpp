#pragma once

// Differentiable tensor operations. Every function returns a new tensor and,
// when grad mode is on and an input requires grad, records a backward
// closure. No broadcasting except where a dedicated op states it (scalars,
// per-feature bias, attention masks).

#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "wsc/gemm.hpp"
#include "wsc/tensor.hpp"

namespace wsc {

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch [" + shape_str(a) + "] vs [" + shape_str(b) + "]");
}

inline Shape strides_of(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Records ReLU pre-activation signs while a gradient check is running so
// that coordinates whose perturbation crosses a kink can be excluded.
inline std::vector<signed char>*& relu_sign_log() {
  thread_local std::vector<signed char>* log = nullptr;
  return log;
}

// Calls f(src_offset, dst_offset) for every element of `shape`, where the
// source and destination are addressed with their own strides.
template <class F>
void for_each_strided(const Shape& shape, const Shape& src_strides, std::size_t src_base, const Shape& dst_strides,
                      std::size_t dst_base, F&& f) {
  const std::size_t rank = shape.size();
  const std::size_t total = numel(shape);
  if (total == 0) return;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t so = src_base, d = dst_base;
  const std::size_t inner = shape[rank - 1];
  const std::size_t sin = src_strides[rank - 1], din = dst_strides[rank - 1];
  for (std::size_t done = 0; done < total; done += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(so + j * sin, d + j * din);
    // advance outer axes
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      so += src_strides[ax];
      d += dst_strides[ax];
      if (idx[ax] < shape[ax]) break;
      so -= src_strides[ax] * shape[ax];
      d -= dst_strides[ax] * shape[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [a, b](auto& self) {
    for (auto* p : {&a.node(), &b.node()}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [a, b](auto& self) {
    auto& an = a.node();
    auto& bn = b.node();
    if (an.requires_grad) {
      an.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn.grad[i] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [a, b](auto& self) {
    auto& an = a.node();
    auto& bn = b.node();
    if (an.requires_grad) {
      an.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i] * bn.data[i];
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn.grad[i] += self.grad[i] * an.data[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [x, s](auto& self) {
    auto& xn = x.node();
    xn.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn.grad[i] += self.grad[i] * s;
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [x](auto& self) {
    auto& xn = x.node();
    xn.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn.grad[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (auto v : x.data()) s += v;
  return Tensor<T>::make_result({1}, {s}, {x}, [x](auto& self) {
    auto& xn = x.node();
    xn.ensure_grad();
    for (auto& g : xn.grad) g += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------- activations

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  if (auto* log = detail::relu_sign_log())
    for (auto v : x.data()) log->push_back(v > T(0) ? 1 : (v < T(0) ? -1 : 0));
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [x](auto& self) {
    auto& xn = x.node();
    xn.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xn.data[i] > T(0)) xn.grad[i] += self.grad[i];
  });
}

/// Exact (erf-based) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [x](auto& self) {
    auto& xn = x.node();
    xn.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = xn.data[i];
      const double d = 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      xn.grad[i] += static_cast<T>(self.grad[i] * d);
    }
  });
}

/// Numerically stabilized softmax along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range");
  const auto& sh = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
  for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
  const std::size_t n = sh[axis];
  std::vector<T> y(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = xd[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, xd[base + k * inner]);
      T s = T(0);
      for (std::size_t k = 0; k < n; ++k) {
        const T e = std::exp(xd[base + k * inner] - mx);
        y[base + k * inner] = e;
        s += e;
      }
      const T inv = T(1) / s;
      for (std::size_t k = 0; k < n; ++k) y[base + k * inner] *= inv;
    }
  return Tensor<T>::make_result(sh, std::move(y), {x}, [x, outer, inner, n](auto& self) {
    auto& xn = x.node();
    xn.ensure_grad();
    const auto& yv = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T dotp = T(0);
        for (std::size_t k = 0; k < n; ++k) dotp += g[base + k * inner] * yv[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t i = base + k * inner;
          xn.grad[i] += yv[i] * (g[i] - dotp);
        }
      }
  });
}

// ---------------------------------------------------------------- matmul

/// Batched matrix product over leading axis: a[B,M,K] (or [B,K,M] if
/// trans_a) times b[B,K,N] (or [B,N,K] if trans_b) gives [B,M,N].
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false) {
  if (a.rank() != 3 || b.rank() != 3) throw ShapeError("bmm: expects rank-3 operands");
  const std::size_t B = a.dim(0);
  if (b.dim(0) != B) throw ShapeError("bmm: batch mismatch");
  const std::size_t M = trans_a ? a.dim(2) : a.dim(1);
  const std::size_t K = trans_a ? a.dim(1) : a.dim(2);
  const std::size_t Kb = trans_b ? b.dim(2) : b.dim(1);
  const std::size_t N = trans_b ? b.dim(1) : b.dim(2);
  if (K != Kb)
    throw ShapeError("bmm: inner dimensions disagree [" + shape_str(a.shape()) + "] x [" + shape_str(b.shape()) + "]");
  std::vector<T> out(B * M * N, T(0));
  for (std::size_t bi = 0; bi < B; ++bi)
    detail::gemm(trans_a, trans_b, M, N, K, a.data().data() + bi * M * K, b.data().data() + bi * K * N,
                 out.data() + bi * M * N);
  return Tensor<T>::make_result({B, M, N}, std::move(out), {a, b},
                                [a, b, trans_a, trans_b, B, M, N, K](auto& self) {
    auto& an = a.node();
    auto& bn = b.node();
    for (std::size_t bi = 0; bi < B; ++bi) {
      const T* dC = self.grad.data() + bi * M * N;
      const T* A = an.data.data() + bi * M * K;
      const T* Bp = bn.data.data() + bi * K * N;
      if (an.requires_grad) {
        an.ensure_grad();
        T* dA = an.grad.data() + bi * M * K;
        if (!trans_a && !trans_b) detail::gemm_nt(M, K, N, dC, Bp, dA);
        else if (!trans_a && trans_b) detail::gemm_nn(M, K, N, dC, Bp, dA);
        else if (trans_a && !trans_b) detail::gemm_nt(K, M, N, Bp, dC, dA);
        else detail::gemm_tt(K, M, N, Bp, dC, dA);
      }
      if (bn.requires_grad) {
        bn.ensure_grad();
        T* dB = bn.grad.data() + bi * K * N;
        if (!trans_b && !trans_a) detail::gemm_tn(K, N, M, A, dC, dB);
        else if (!trans_b && trans_a) detail::gemm_nn(K, N, M, A, dC, dB);
        else if (trans_b && !trans_a) detail::gemm_tn(N, K, M, dC, A, dB);
        else detail::gemm_tt(N, K, M, dC, A, dB);
      }
    }
  });
}

// ---------------------------------------------------------------- shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  validate_shape(shape);
  if (numel(shape) != x.numel())
    throw ShapeError("reshape: [" + shape_str(x.shape()) + "] to [" + shape_str(shape) + "] changes element count");
  return Tensor<T>::make_result(std::move(shape), x.vec(), {x}, [x](auto& self) {
    auto& xn = x.node();
    xn.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn.grad[i] += self.grad[i];
  });
}

inline std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

/// Output axis i is input axis perm[i].
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const auto& sh = x.shape();
  if (perm.size() != sh.size()) throw ShapeError("permute: permutation rank mismatch");
  std::vector<bool> used(perm.size(), false);
  for (auto p : perm) {
    if (p >= perm.size() || used[p]) throw ShapeError("permute: invalid permutation");
    used[p] = true;
  }
  Shape out_shape(sh.size());
  const Shape in_strides = detail::strides_of(sh);
  Shape src_strides(sh.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out_shape[i] = sh[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  const Shape out_strides = detail::strides_of(out_shape);
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  detail::for_each_strided(out_shape, src_strides, 0, out_strides, 0,
                           [&](std::size_t s, std::size_t d) { out[d] = xd[s]; });
  return Tensor<T>::make_result(out_shape, std::move(out), {x}, [x, out_shape, src_strides, out_strides](auto& self) {
    auto& xn = x.node();
    xn.ensure_grad();
    detail::for_each_strided(out_shape, src_strides, 0, out_strides, 0,
                             [&](std::size_t s, std::size_t d) { xn.grad[s] += self.grad[d]; });
  });
}

/// Elements [start, start+length) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank()) throw ShapeError("slice: axis out of range");
  if (length == 0 || start + length > x.dim(axis)) throw ShapeError("slice: range out of bounds");
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const Shape in_strides = detail::strides_of(x.shape());
  const Shape out_strides = detail::strides_of(out_shape);
  const std::size_t base = start * in_strides[axis];
  std::vector<T> out(numel(out_shape));
  const auto xd = x.data();
  detail::for_each_strided(out_shape, in_strides, base, out_strides, 0,
                           [&](std::size_t s, std::size_t d) { out[d] = xd[s]; });
  return Tensor<T>::make_result(out_shape, std::move(out), {x}, [x, out_shape, in_strides, out_strides, base](auto& self) {
    auto& xn = x.node();
    xn.ensure_grad();
    detail::for_each_strided(out_shape, in_strides, base, out_strides, 0,
                             [&](std::size_t s, std::size_t d) { xn.grad[s] += self.grad[d]; });
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = xs.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : xs) {
    if (t.rank() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i)
      if (i != axis && t.dim(i) != first[i])
        throw ShapeError("concat: incompatible shapes [" + shape_str(first) + "] and [" + shape_str(t.shape()) + "]");
    out_shape[axis] += t.dim(axis);
  }
  const Shape out_strides = detail::strides_of(out_shape);
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off * out_strides[axis]);
    const Shape in_strides = detail::strides_of(t.shape());
    const auto td = t.data();
    detail::for_each_strided(t.shape(), in_strides, 0, out_strides, offsets.back(),
                             [&](std::size_t s, std::size_t d) { out[d] = td[s]; });
    off += t.dim(axis);
  }
  return Tensor<T>::make_result(out_shape, std::move(out), xs, [xs, offsets, out_strides](auto& self) {
    for (std::size_t k = 0; k < xs.size(); ++k) {
      auto& n = xs[k].node();
      if (!n.requires_grad) continue;
      n.ensure_grad();
      detail::for_each_strided(n.shape, detail::strides_of(n.shape), 0, out_strides, offsets[k],
                               [&](std::size_t s, std::size_t d) { n.grad[s] += self.grad[d]; });
    }
  });
}

template <class T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::size_t axis, const std::vector<std::size_t>& sizes) {
  std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (axis >= x.rank() || total != x.dim(axis)) throw ShapeError("split: sizes do not cover the axis");
  std::vector<Tensor<T>> parts;
  std::size_t start = 0;
  for (auto s : sizes) {
    parts.push_back(slice(x, axis, start, s));
    start += s;
  }
  return parts;
}

/// Zero padding: `before[i]`/`after[i]` elements added on axis i.
template <class T>
Tensor<T> pad(const Tensor<T>& x, const std::vector<std::size_t>& before, const std::vector<std::size_t>& after) {
  if (before.size() != x.rank() || after.size() != x.rank()) throw ShapeError("pad: one entry per axis required");
  Shape out_shape = x.shape();
  for (std::size_t i = 0; i < out_shape.size(); ++i) out_shape[i] += before[i] + after[i];
  const Shape out_strides = detail::strides_of(out_shape);
  const Shape in_strides = detail::strides_of(x.shape());
  std::size_t base = 0;
  for (std::size_t i = 0; i < before.size(); ++i) base += before[i] * out_strides[i];
  std::vector<T> out(numel(out_shape), T(0));
  const auto xd = x.data();
  detail::for_each_strided(x.shape(), in_strides, 0, out_strides, base,
                           [&](std::size_t s, std::size_t d) { out[d] = xd[s]; });
  return Tensor<T>::make_result(out_shape, std::move(out), {x}, [x, in_strides, out_strides, base](auto& self) {
    auto& xn = x.node();
    xn.ensure_grad();
    detail::for_each_strided(xn.shape, in_strides, 0, out_strides, base,
                             [&](std::size_t s, std::size_t d) { xn.grad[s] += self.grad[d]; });
  });
}

/// Cyclic shift: output[(i + shift) mod n] = input[i] on each axis.
template <class T>
Tensor<T> roll(const Tensor<T>& x, const std::vector<long>& shifts) {
  const auto& sh = x.shape();
  if (shifts.size() != sh.size()) throw ShapeError("roll: one shift per axis required");
  std::vector<std::size_t> norm(sh.size());
  for (std::size_t i = 0; i < sh.size(); ++i) {
    const long n = static_cast<long>(sh[i]);
    norm[i] = static_cast<std::size_t>(((shifts[i] % n) + n) % n);
  }
  const Shape strides = detail::strides_of(sh);
  // map[i] = destination index of source element i
  std::vector<std::size_t> dest(x.numel());
  std::vector<std::size_t> idx(sh.size(), 0);
  for (std::size_t lin = 0; lin < dest.size(); ++lin) {
    std::size_t d = 0;
    for (std::size_t a = 0; a < sh.size(); ++a) d += ((idx[a] + norm[a]) % sh[a]) * strides[a];
    dest[lin] = d;
    for (std::size_t a = sh.size(); a-- > 0;) {
      if (++idx[a] < sh[a]) break;
      idx[a] = 0;
    }
  }
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < dest.size(); ++i) out[dest[i]] = x[i];
  return Tensor<T>::make_result(sh, std::move(out), {x}, [x, dest = std::move(dest)](auto& self) {
    auto& xn = x.node();
    xn.ensure_grad();
    for (std::size_t i = 0; i < dest.size(); ++i) xn.grad[i] += self.grad[dest[i]];
  });
}

// ---------------------------------------------------------------- normalization

namespace detail {

// Normalizes `groups` contiguous blocks of `block` elements each and applies
// a per-feature affine transform; channel_of(j) maps a block offset to the
// affine index.
template <class T, class ChannelOf>
Tensor<T> normalize_blocks(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::size_t groups,
                           std::size_t block, double eps, ChannelOf channel_of, std::size_t block_channel_stride) {
  std::vector<T> y(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(groups);
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t base = g * block;
    double m = 0.0;
    for (std::size_t j = 0; j < block; ++j) m += xd[base + j];
    m /= static_cast<double>(block);
    double v = 0.0;
    for (std::size_t j = 0; j < block; ++j) {
      const double d = xd[base + j] - m;
      v += d * d;
    }
    v /= static_cast<double>(block);
    const double is = 1.0 / std::sqrt(v + eps);
    inv_std[g] = static_cast<T>(is);
    const std::size_t cbase = (g * block_channel_stride);
    for (std::size_t j = 0; j < block; ++j) {
      const T xh = static_cast<T>((xd[base + j] - m) * is);
      xhat[base + j] = xh;
      const std::size_t c = channel_of(cbase, j);
      y[base + j] = xh * gd[c] + bd[c];
    }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(y), {x, gamma, beta},
      [x, gamma, beta, groups, block, channel_of, block_channel_stride, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](auto& self) {
        auto& xn = x.node();
        auto& gn = gamma.node();
        auto& bn = beta.node();
        const auto& dy = self.grad;
        if (gn.requires_grad) gn.ensure_grad();
        if (bn.requires_grad) bn.ensure_grad();
        if (xn.requires_grad) xn.ensure_grad();
        std::vector<T> dxh(block);
        for (std::size_t g = 0; g < groups; ++g) {
          const std::size_t base = g * block;
          const std::size_t cbase = g * block_channel_stride;
          T s1 = T(0), s2 = T(0);
          for (std::size_t j = 0; j < block; ++j) {
            const std::size_t c = channel_of(cbase, j);
            const T d = dy[base + j];
            if (gn.requires_grad) gn.grad[c] += d * xhat[base + j];
            if (bn.requires_grad) bn.grad[c] += d;
            dxh[j] = d * gn.data[c];
            s1 += dxh[j];
            s2 += dxh[j] * xhat[base + j];
          }
          if (!xn.requires_grad) continue;
          const T invm = T(1) / static_cast<T>(block);
          for (std::size_t j = 0; j < block; ++j)
            xn.grad[base + j] += inv_std[g] * (dxh[j] - invm * s1 - xhat[base + j] * invm * s2);
        }
      });
}

}  // namespace detail

/// GroupNorm over x[N, C, ...]: statistics per (sample, group of C/groups channels).
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5) {
  if (x.rank() < 2) throw ShapeError("group_norm: expects [N, C, ...]");
  if (eps <= 0.0) throw std::invalid_argument("group_norm: eps must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1);
  if (groups == 0 || C % groups != 0)
    throw ShapeError("group_norm: " + std::to_string(C) + " channels not divisible into " + std::to_string(groups) +
                     " groups");
  if (gamma.numel() != C || beta.numel() != C) throw ShapeError("group_norm: affine parameters must have C entries");
  const std::size_t S = x.numel() / (N * C);
  const std::size_t cg = C / groups;
  // block g covers sample g / groups, channels (g % groups)*cg ...
  auto channel_of = [S, cg, groups](std::size_t gidx, std::size_t j) { return (gidx % groups) * cg + j / S; };
  return detail::normalize_blocks(x, gamma, beta, N * groups, cg * S, eps, channel_of, 1);
}

/// LayerNorm over the last axis.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5) {
  const std::size_t C = x.shape().back();
  if (gamma.numel() != C || beta.numel() != C) throw ShapeError("layer_norm: affine parameters must match last axis");
  auto channel_of = [](std::size_t, std::size_t j) { return j; };
  return detail::normalize_blocks(x, gamma, beta, x.numel() / C, C, eps, channel_of, 0);
}

// ---------------------------------------------------------------- linear layers

/// Adds bias[C] along the last axis.
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t C = x.shape().back();
  if (bias.numel() != C) throw ShapeError("add_bias: bias length must match last axis");
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % C];
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, bias}, [x, bias, C](auto& self) {
    auto& xn = x.node();
    auto& bn = bias.node();
    if (xn.requires_grad) {
      xn.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) xn.grad[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn.grad[i % C] += self.grad[i];
    }
  });
}

/// Token-wise affine map: x[..., Cin] * weight[Cin, Cout] + bias[Cout].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const std::size_t cin = x.shape().back();
  if (weight.rank() != 2 || weight.dim(0) != cin)
    throw ShapeError("linear: weight [" + shape_str(weight.shape()) + "] does not accept " + std::to_string(cin) +
                     " input features");
  const std::size_t cout = weight.dim(1);
  const std::size_t tokens = x.numel() / cin;
  auto flat = reshape(x, {1, tokens, cin});
  auto w3 = reshape(weight, {1, cin, cout});
  auto y = bmm(flat, w3);
  Shape out_shape = x.shape();
  out_shape.back() = cout;
  y = reshape(y, out_shape);
  return bias.defined() ? add_bias(y, bias) : y;
}

/// 2-D matrix product.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: expects 2-D operands");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree [" + shape_str(a.shape()) + "] x [" + shape_str(b.shape()) + "]");
  auto y = bmm(reshape(a, {1, a.dim(0), a.dim(1)}), reshape(b, {1, b.dim(0), b.dim(1)}));
  return reshape(y, {a.dim(0), b.dim(1)});
}

/// scores[B*nW, heads, T, T] + mask[nW, T, T], the mask repeating over the
/// batch and heads. The mask is a constant.
template <class T>
Tensor<T> add_attention_mask(const Tensor<T>& scores, const std::vector<T>& mask, std::size_t num_windows) {
  if (scores.rank() != 4) throw ShapeError("add_attention_mask: expects [B*nW, heads, T, T]");
  const std::size_t bw = scores.dim(0), heads = scores.dim(1), t2 = scores.dim(2) * scores.dim(3);
  if (mask.size() != num_windows * t2 || bw % num_windows != 0) throw ShapeError("add_attention_mask: mask shape");
  std::vector<T> out(scores.numel());
  for (std::size_t b = 0; b < bw; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t so = (b * heads + h) * t2;
      const std::size_t mo = (b % num_windows) * t2;
      for (std::size_t i = 0; i < t2; ++i) out[so + i] = scores[so + i] + mask[mo + i];
    }
  return Tensor<T>::make_result(scores.shape(), std::move(out), {scores}, [scores](auto& self) {
    auto& sn = scores.node();
    sn.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) sn.grad[i] += self.grad[i];
  });
}

}  // namespace wsc

#pragma once

// 3-D convolution and transposed convolution via im2col lowering.
//
// Layouts: activations [N, C, D, H, W]; conv3d weight [Cout, Cin, k, k, k];
// conv_transpose3d weight [Cin, Cout, k, k, k]; bias [Cout] (optional).

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "wsc/gemm.hpp"
#include "wsc/tensor.hpp"

namespace wsc {

namespace detail {

struct ConvGeometry {
  std::size_t channels;               // channels of the "image" side
  std::array<std::size_t, 3> image;   // extents of the image side
  std::array<std::size_t, 3> grid;    // extents of the column side
  std::size_t k, stride, padding;

  std::size_t image_volume() const { return image[0] * image[1] * image[2]; }
  std::size_t grid_volume() const { return grid[0] * grid[1] * grid[2]; }
  std::size_t rows() const { return channels * k * k * k; }
};

// col[(c, a, b, d), (z, y, x)] = img[c, z*s - p + a, y*s - p + b, x*s - p + d]
template <class T>
void im2col(const ConvGeometry& g, const T* img, T* col) {
  const std::size_t gv = g.grid_volume();
  const long s = static_cast<long>(g.stride), p = static_cast<long>(g.padding);
  const long D = static_cast<long>(g.image[0]), H = static_cast<long>(g.image[1]), W = static_cast<long>(g.image[2]);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* ic = img + c * g.image_volume();
    for (std::size_t a = 0; a < g.k; ++a)
      for (std::size_t b = 0; b < g.k; ++b)
        for (std::size_t d = 0; d < g.k; ++d, ++row) {
          T* out = col + row * gv;
          std::size_t o = 0;
          for (std::size_t z = 0; z < g.grid[0]; ++z) {
            const long iz = static_cast<long>(z) * s - p + static_cast<long>(a);
            for (std::size_t y = 0; y < g.grid[1]; ++y) {
              const long iy = static_cast<long>(y) * s - p + static_cast<long>(b);
              const bool inside = iz >= 0 && iz < D && iy >= 0 && iy < H;
              const T* src = inside ? ic + (iz * H + iy) * W : nullptr;
              for (std::size_t x = 0; x < g.grid[2]; ++x, ++o) {
                const long ix = static_cast<long>(x) * s - p + static_cast<long>(d);
                out[o] = (inside && ix >= 0 && ix < W) ? src[ix] : T(0);
              }
            }
          }
        }
  }
}

// Adjoint of im2col: img += scatter(col).
template <class T>
void col2im(const ConvGeometry& g, const T* col, T* img) {
  const std::size_t gv = g.grid_volume();
  const long s = static_cast<long>(g.stride), p = static_cast<long>(g.padding);
  const long D = static_cast<long>(g.image[0]), H = static_cast<long>(g.image[1]), W = static_cast<long>(g.image[2]);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* ic = img + c * g.image_volume();
    for (std::size_t a = 0; a < g.k; ++a)
      for (std::size_t b = 0; b < g.k; ++b)
        for (std::size_t d = 0; d < g.k; ++d, ++row) {
          const T* in = col + row * gv;
          std::size_t o = 0;
          for (std::size_t z = 0; z < g.grid[0]; ++z) {
            const long iz = static_cast<long>(z) * s - p + static_cast<long>(a);
            for (std::size_t y = 0; y < g.grid[1]; ++y) {
              const long iy = static_cast<long>(y) * s - p + static_cast<long>(b);
              if (iz < 0 || iz >= D || iy < 0 || iy >= H) {
                o += g.grid[2];
                continue;
              }
              T* dst = ic + (iz * H + iy) * W;
              for (std::size_t x = 0; x < g.grid[2]; ++x, ++o) {
                const long ix = static_cast<long>(x) * s - p + static_cast<long>(d);
                if (ix >= 0 && ix < W) dst[ix] += in[o];
              }
            }
          }
        }
  }
}

inline void check_5d(const Shape& s, const char* op) {
  if (s.size() != 5) throw ShapeError(std::string(op) + ": expects a rank-5 [N, C, D, H, W] tensor");
}

}  // namespace detail

/// Output extent per axis: floor((in + 2p - k) / stride) + 1.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ShapeError("conv: stride must be >= 1");
  if (in + 2 * padding < k) throw ShapeError("conv: kernel larger than padded input");
  return (in + 2 * padding - k) / stride + 1;
}

template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride = 1,
                 std::size_t padding = 0) {
  detail::check_5d(x.shape(), "conv3d");
  if (w.rank() != 5 || w.dim(2) != w.dim(3) || w.dim(3) != w.dim(4))
    throw ShapeError("conv3d: weight must be [Cout, Cin, k, k, k]");
  const std::size_t N = x.dim(0), cin = x.dim(1), cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin)
    throw ShapeError("conv3d: input has " + std::to_string(cin) + " channels, weight expects " + std::to_string(w.dim(1)));
  if (bias.defined() && bias.numel() != cout) throw ShapeError("conv3d: bias length mismatch");
  detail::ConvGeometry g{cin, {x.dim(2), x.dim(3), x.dim(4)}, {}, k, stride, padding};
  for (int a = 0; a < 3; ++a) g.grid[a] = conv_out_extent(g.image[a], k, stride, padding);
  const std::size_t gv = g.grid_volume(), iv = g.image_volume(), rows = g.rows();
  std::vector<T> out(N * cout * gv, T(0));
  std::vector<T> col(rows * gv);
  for (std::size_t n = 0; n < N; ++n) {
    detail::im2col(g, x.data().data() + n * cin * iv, col.data());
    T* y = out.data() + n * cout * gv;
    if (bias.defined())
      for (std::size_t c = 0; c < cout; ++c) std::fill(y + c * gv, y + (c + 1) * gv, bias[c]);
    detail::gemm_nn(cout, gv, rows, w.data().data(), col.data(), y);
  }
  Shape out_shape{N, cout, g.grid[0], g.grid[1], g.grid[2]};
  return Tensor<T>::make_result(out_shape, std::move(out), {x, w, bias}, [x, w, bias, g, N, cin, cout](auto& self) {
    auto& xn = x.node();
    auto& wn = w.node();
    const std::size_t gv = g.grid_volume(), iv = g.image_volume(), rows = g.rows();
    std::vector<T> col(rows * gv);
    if (wn.requires_grad) wn.ensure_grad();
    if (xn.requires_grad) xn.ensure_grad();
    for (std::size_t n = 0; n < N; ++n) {
      const T* dy = self.grad.data() + n * cout * gv;
      if (wn.requires_grad) {
        detail::im2col(g, xn.data.data() + n * cin * iv, col.data());
        detail::gemm_nt(cout, rows, gv, dy, col.data(), wn.grad.data());
      }
      if (xn.requires_grad) {
        std::fill(col.begin(), col.end(), T(0));
        detail::gemm_tn(rows, gv, cout, wn.data.data(), dy, col.data());
        detail::col2im(g, col.data(), xn.grad.data() + n * cin * iv);
      }
    }
    if (bias.defined() && bias.node().requires_grad) {
      auto& bn = bias.node();
      bn.ensure_grad();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < cout; ++c) {
          const T* dy = self.grad.data() + (n * cout + c) * gv;
          T s = T(0);
          for (std::size_t i = 0; i < gv; ++i) s += dy[i];
          bn.grad[c] += s;
        }
    }
  });
}

/// Transposed convolution (no padding): out extent = (in - 1) * stride + k.
template <class T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride = 2) {
  detail::check_5d(x.shape(), "conv_transpose3d");
  if (w.rank() != 5 || w.dim(2) != w.dim(3) || w.dim(3) != w.dim(4))
    throw ShapeError("conv_transpose3d: weight must be [Cin, Cout, k, k, k]");
  if (stride == 0) throw ShapeError("conv_transpose3d: stride must be >= 1");
  const std::size_t N = x.dim(0), cin = x.dim(1), cout = w.dim(1), k = w.dim(2);
  if (w.dim(0) != cin)
    throw ShapeError("conv_transpose3d: input has " + std::to_string(cin) + " channels, weight expects " +
                     std::to_string(w.dim(0)));
  if (bias.defined() && bias.numel() != cout) throw ShapeError("conv_transpose3d: bias length mismatch");
  // The image side is the (larger) output; the column grid is the input.
  detail::ConvGeometry g{cout, {}, {x.dim(2), x.dim(3), x.dim(4)}, k, stride, 0};
  for (int a = 0; a < 3; ++a) g.image[a] = (g.grid[a] - 1) * stride + k;
  const std::size_t gv = g.grid_volume(), iv = g.image_volume(), rows = g.rows();
  std::vector<T> out(N * cout * iv, T(0));
  std::vector<T> col(rows * gv);
  for (std::size_t n = 0; n < N; ++n) {
    std::fill(col.begin(), col.end(), T(0));
    detail::gemm_tn(rows, gv, cin, w.data().data(), x.data().data() + n * cin * gv, col.data());
    T* y = out.data() + n * cout * iv;
    detail::col2im(g, col.data(), y);
    if (bias.defined())
      for (std::size_t c = 0; c < cout; ++c)
        for (std::size_t i = 0; i < iv; ++i) y[c * iv + i] += bias[c];
  }
  Shape out_shape{N, cout, g.image[0], g.image[1], g.image[2]};
  return Tensor<T>::make_result(out_shape, std::move(out), {x, w, bias}, [x, w, bias, g, N, cin, cout](auto& self) {
    auto& xn = x.node();
    auto& wn = w.node();
    const std::size_t gv = g.grid_volume(), iv = g.image_volume(), rows = g.rows();
    std::vector<T> col(rows * gv);
    if (wn.requires_grad) wn.ensure_grad();
    if (xn.requires_grad) xn.ensure_grad();
    for (std::size_t n = 0; n < N; ++n) {
      detail::im2col(g, self.grad.data() + n * cout * iv, col.data());
      if (xn.requires_grad) detail::gemm_nn(cin, gv, rows, wn.data.data(), col.data(), xn.grad.data() + n * cin * gv);
      if (wn.requires_grad) detail::gemm_nt(cin, rows, gv, xn.data.data() + n * cin * gv, col.data(), wn.grad.data());
    }
    if (bias.defined() && bias.node().requires_grad) {
      auto& bn = bias.node();
      bn.ensure_grad();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < cout; ++c) {
          const T* dy = self.grad.data() + (n * cout + c) * iv;
          T s = T(0);
          for (std::size_t i = 0; i < iv; ++i) s += dy[i];
          bn.grad[c] += s;
        }
    }
  });
}

}  // namespace wsc

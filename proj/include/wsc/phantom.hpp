#pragma once

// Synthetic ear-like phantoms: five small structures in a noisy background.
//
//   1 spiral tube           (cochlea-like)
//   2 thin curved tube      (facial-nerve-like, the thinnest structure)
//   3 chain of small blobs  (ossicles-like)
//   4 three orthogonal arcs (semicircular-canal-like)
//   5 ellipsoid             (vestibule-like)
//
// Geometry scales with the extent E; each seed jitters positions, sizes and
// orientations. Structures are drawn in class order, so a later class wins
// where two overlap.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wsc/tensor.hpp"
#include "wsc/volume.hpp"

namespace wsc {

inline constexpr std::size_t kPhantomClasses = 6;
inline constexpr std::size_t kMinPhantomExtent = 16;

struct PhantomSpec {
  std::size_t extent = 32;
  // tube radii and blob sizes as fractions of the extent
  double cochlea_radius = 0.05;
  double nerve_radius = 0.03;
  double ossicle_radius = 0.06;
  double canal_radius = 0.04;
  double canal_arc_radius = 0.12;
  std::array<double, 3> vestibule_axes{0.10, 0.07, 0.08};
  // mean intensity per class (index 0 = background) before normalization
  std::array<double, kPhantomClasses> intensity{0.15, 0.95, 0.55, 0.80, 0.68, 0.40};
  double noise = 0.02;
};

using Vec3 = std::array<double, 3>;

namespace detail {

// Paints every voxel within `r` of p with `cls`.
inline void paint_ball(LabelMap& l, const Vec3& p, double r, std::uint8_t cls) {
  const auto& e = l.extents;
  std::array<long, 3> lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max(0L, static_cast<long>(std::floor(p[a] - r)));
    hi[a] = std::min(static_cast<long>(e[a]) - 1, static_cast<long>(std::ceil(p[a] + r)));
  }
  for (long z = lo[0]; z <= hi[0]; ++z)
    for (long y = lo[1]; y <= hi[1]; ++y)
      for (long x = lo[2]; x <= hi[2]; ++x) {
        const double dz = z - p[0], dy = y - p[1], dx = x - p[2];
        if (dz * dz + dy * dy + dx * dx <= r * r) l.at(z, y, x) = cls;
      }
}

// Sweeps a ball of radius r along curve(t), t in [0, 1].
inline void paint_tube(LabelMap& l, const std::function<Vec3(double)>& curve, double r, std::uint8_t cls) {
  // sample finely enough that consecutive balls overlap
  double length = 0.0;
  Vec3 prev = curve(0.0);
  for (int i = 1; i <= 256; ++i) {
    const Vec3 q = curve(i / 256.0);
    length += std::hypot(q[0] - prev[0], q[1] - prev[1], q[2] - prev[2]);
    prev = q;
  }
  const int steps = std::max(2, static_cast<int>(std::ceil(length / 0.25)));
  for (int i = 0; i <= steps; ++i) paint_ball(l, curve(double(i) / steps), r, cls);
}

inline void paint_ellipsoid(LabelMap& l, const Vec3& c, const Vec3& axes, std::uint8_t cls) {
  const auto& e = l.extents;
  for (std::size_t z = 0; z < e[0]; ++z)
    for (std::size_t y = 0; y < e[1]; ++y)
      for (std::size_t x = 0; x < e[2]; ++x) {
        const double dz = (z - c[0]) / axes[0], dy = (y - c[1]) / axes[1], dx = (x - c[2]) / axes[2];
        if (dz * dz + dy * dy + dx * dx <= 1.0) l.at(z, y, x) = cls;
      }
}

}  // namespace detail

/// Returns (intensity volume normalized to [0, 1], label map).
inline std::pair<Volume, LabelMap> phantom_generate(const PhantomSpec& spec, Rng& rng) {
  const std::size_t E = spec.extent;
  if (E < kMinPhantomExtent)
    throw std::invalid_argument("phantom extent " + std::to_string(E) + " too small to place all structures (need >= " +
                                std::to_string(kMinPhantomExtent) + ")");
  const double e = static_cast<double>(E);
  auto jit = [&](double amount) { return rng.uniform(-amount, amount); };

  // radii in voxels; the nerve stays strictly thinnest
  const double r_nerve = std::max(0.75, spec.nerve_radius * e);
  const double r_coch = std::max(r_nerve + 0.25, spec.cochlea_radius * e);
  const double r_canal = std::max(r_nerve + 0.25, spec.canal_radius * e);
  const double r_oss = std::max(r_nerve + 0.5, spec.ossicle_radius * e);

  LabelMap labels({E, E, E});

  // cochlea: ~2.5 turn spiral in the (y, x) plane, slowly rising in z
  {
    const Vec3 c{e * (0.30 + jit(0.03)), e * (0.30 + jit(0.03)), e * (0.30 + jit(0.03))};
    const double R = e * (0.14 + jit(0.01)), turns = 2.5, phase = rng.uniform(0.0, 6.283185307179586);
    const double rise = e * 0.08;
    detail::paint_tube(
        labels,
        [&](double t) {
          const double a = phase + t * turns * 6.283185307179586, rr = R * (1.0 - 0.6 * t);
          return Vec3{c[0] + rise * (t - 0.5), c[1] + rr * std::sin(a), c[2] + rr * std::cos(a)};
        },
        r_coch, 1);
  }
  // facial nerve: gently bending tube along z with an elbow
  {
    const double y0 = e * (0.70 + jit(0.03)), x0 = e * (0.25 + jit(0.03)), bend = e * (0.10 + jit(0.02));
    detail::paint_tube(
        labels,
        [&](double t) {
          return Vec3{e * (0.15 + 0.7 * t), y0 + bend * std::sin(3.14159265358979 * t), x0 + 0.15 * e * t * t};
        },
        r_nerve, 2);
  }
  // ossicles: three blobs along a short chain
  {
    const Vec3 start{e * (0.70 + jit(0.03)), e * (0.30 + jit(0.03)), e * (0.70 + jit(0.03))};
    const Vec3 dir{0.6 + jit(0.2), 0.5 + jit(0.2), -0.6 + jit(0.2)};
    const double n = std::hypot(dir[0], dir[1], dir[2]), step = 2.2 * r_oss;
    for (int b = 0; b < 3; ++b) {
      const Vec3 p{start[0] + dir[0] / n * step * b, start[1] + dir[1] / n * step * b, start[2] + dir[2] / n * step * b};
      detail::paint_ball(labels, p, r_oss * (b == 1 ? 1.0 : 0.85), 3);
    }
  }
  // semicircular canals: three half circles in mutually orthogonal planes
  {
    const Vec3 c{e * (0.68 + jit(0.03)), e * (0.70 + jit(0.03)), e * (0.70 + jit(0.03))};
    const double R = spec.canal_arc_radius * e * (1.0 + jit(0.08));
    for (int plane = 0; plane < 3; ++plane) {
      const int a0 = plane, a1 = (plane + 1) % 3;
      detail::paint_tube(
          labels,
          [&](double t) {
            const double ang = 3.14159265358979 * t;
            Vec3 p = c;
            p[a0] += R * std::cos(ang);
            p[a1] += R * std::sin(ang);
            return p;
          },
          r_canal, 4);
    }
  }
  // vestibule
  {
    const Vec3 c{e * (0.45 + jit(0.03)), e * (0.50 + jit(0.03)), e * (0.50 + jit(0.03))};
    Vec3 ax;
    for (int a = 0; a < 3; ++a) ax[a] = std::max(r_nerve + 0.5, spec.vestibule_axes[a] * e * (1.0 + jit(0.1)));
    detail::paint_ellipsoid(labels, c, ax, 5);
  }

  Volume vol({E, E, E});
  for (std::size_t i = 0; i < vol.size(); ++i) vol.data[i] = static_cast<float>(spec.intensity[labels.data[i]] + spec.noise * rng.normal());
  const auto [mn, mx] = std::minmax_element(vol.data.begin(), vol.data.end());
  const float lo = *mn, span = std::max(*mx - *mn, 1e-12f);
  for (auto& v : vol.data) v = std::clamp((v - lo) / span, 0.0f, 1.0f);
  return {std::move(vol), std::move(labels)};
}

inline std::array<std::size_t, kPhantomClasses> class_counts(const LabelMap& l) {
  std::array<std::size_t, kPhantomClasses> n{};
  for (auto v : l.data) ++n.at(v);
  return n;
}

// ---------------------------------------------------------------- augmentation

/// Reflection along the lateral (W) axis.
template <class V>
Grid<V> mirror_lr(const Grid<V>& g) {
  Grid<V> out = g;
  const auto [D, H, W] = g.extents;
  for (std::size_t z = 0; z < D; ++z)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) out.at(z, y, x) = g.at(z, y, W - 1 - x);
  return out;
}

inline std::pair<Volume, LabelMap> mirror_lr(const Volume& v, const LabelMap& l) { return {mirror_lr(v), mirror_lr(l)}; }

using Offset3 = std::array<long, 3>;

/// Integer translation; vacated voxels take the value V{} (zero intensity, background).
template <class V>
Grid<V> translate(const Grid<V>& g, const Offset3& off) {
  Grid<V> out(g.extents);
  out.spacing = g.spacing;
  const auto& e = g.extents;
  for (long z = 0; z < long(e[0]); ++z)
    for (long y = 0; y < long(e[1]); ++y)
      for (long x = 0; x < long(e[2]); ++x) {
        const long sz = z - off[0], sy = y - off[1], sx = x - off[2];
        if (sz < 0 || sy < 0 || sx < 0 || sz >= long(e[0]) || sy >= long(e[1]) || sx >= long(e[2])) continue;
        out.at(z, y, x) = g.at(sz, sy, sx);
      }
  return out;
}

inline constexpr double kShiftMinFraction = 0.083;
inline constexpr double kShiftMaxFraction = 0.104;

/// Per axis: magnitude round(f * extent), f ~ U[0.083, 0.104], random sign.
inline Offset3 draw_axis_shift(const std::array<std::size_t, 3>& extents, Rng& rng) {
  Offset3 off{};
  for (int a = 0; a < 3; ++a) {
    const double f = rng.uniform(kShiftMinFraction, kShiftMaxFraction);
    const long mag = std::lround(f * static_cast<double>(extents[a]));
    off[a] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return off;
}

struct ShiftResult {
  Volume volume;
  LabelMap labels;
  Offset3 offset{};
};

inline ShiftResult random_axis_shift(const Volume& v, const LabelMap& l, Rng& rng, bool zero_shift = false) {
  if (v.extents != l.extents) throw std::invalid_argument("volume and label extents differ");
  const Offset3 off = zero_shift ? Offset3{0, 0, 0} : draw_axis_shift(v.extents, rng);
  return {translate(v, off), translate(l, off), off};
}

}  // namespace wsc

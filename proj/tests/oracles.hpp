#pragma once

// Slow reference implementations used as test oracles.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "wsc/tensor.hpp"
#include "wsc/volume.hpp"

namespace oracle {

using Mask = wsc::Grid<std::uint8_t>;

inline Mask random_mask(wsc::Rng& rng, std::array<std::size_t, 3> ext, double density) {
  Mask m(ext);
  for (auto& v : m.data) v = rng.uniform() < density;
  return m;
}

inline std::vector<std::array<double, 3>> surface(const Mask& m) {
  const long D = m.extents[0], H = m.extents[1], W = m.extents[2];
  auto fg = [&](long z, long y, long x) {
    return z >= 0 && y >= 0 && x >= 0 && z < D && y < H && x < W && m.at(z, y, x);
  };
  static const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  std::vector<std::array<double, 3>> out;
  for (long z = 0; z < D; ++z)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        if (!fg(z, y, x)) continue;
        bool edge = false;
        for (auto& d : nb) edge |= !fg(z + d[0], y + d[1], x + d[2]);
        if (edge) out.push_back({z * double(m.spacing[0]), y * double(m.spacing[1]), x * double(m.spacing[2])});
      }
  return out;
}

// all-pairs directed distances
inline std::vector<double> directed(const Mask& a, const Mask& b) {
  const auto sa = surface(a), sb = surface(b);
  std::vector<double> d;
  if (sb.empty()) return d;
  for (const auto& p : sa) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : sb) {
      const double dz = p[0] - q[0], dy = p[1] - q[1], dx = p[2] - q[2];
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    d.push_back(std::sqrt(best));
  }
  return d;
}

inline double p95(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  std::size_t k = 0;
  while (100 * (k + 1) < 95 * n) ++k;  // smallest k with (k+1)/n >= 0.95
  return v[k];
}

inline bool hd95(const Mask& a, const Mask& b, double& out) {
  const auto ab = directed(a, b), ba = directed(b, a);
  if (ab.empty() || ba.empty()) return false;
  out = std::max(p95(ab), p95(ba));
  return true;
}

inline bool assd(const Mask& a, const Mask& b, double& out) {
  const auto ab = directed(a, b), ba = directed(b, a);
  if (ab.empty() || ba.empty()) return false;
  double s1 = 0, s2 = 0;
  for (double v : ab) s1 += v;
  for (double v : ba) s2 += v;
  out = (s1 / ab.size() + s2 / ba.size()) / 2;
  return true;
}

}  // namespace oracle

#pragma once

// Overlap and surface-distance metrics on binary masks, and the per-class
// evaluation report.
//
// Surface voxels are foreground voxels with at least one background
// 6-neighbour (outside the grid counts as background). Directed distances
// go from each surface voxel of one mask to the nearest surface voxel of the
// other, in physical units given by the voxel spacing. HD95 is the larger of
// the two directed 95th percentiles (nearest rank); ASSD averages the two
// directed mean distances.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsc/volume.hpp"

namespace wsc {

/// Binary mask; any non-zero value is foreground.
using Mask = Grid<std::uint8_t>;

using Coord = std::array<int, 3>;

inline void require_same_extents(const std::array<std::size_t, 3>& a, const std::array<std::size_t, 3>& b) {
  if (a != b) throw std::invalid_argument("mask extents differ");
}

struct OverlapCounts {
  std::size_t pred = 0, truth = 0, both = 0;
};

inline OverlapCounts overlap_counts(const Mask& P, const Mask& G) {
  require_same_extents(P.extents, G.extents);
  OverlapCounts c;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const bool p = P.data[i] != 0, g = G.data[i] != 0;
    c.pred += p;
    c.truth += g;
    c.both += p && g;
  }
  return c;
}

/// 2|P n G| / (|P| + |G|); 1 when both masks are empty.
inline double dss(const Mask& P, const Mask& G) {
  const auto c = overlap_counts(P, G);
  if (c.pred + c.truth == 0) return 1.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.pred + c.truth);
}

/// |P n G| / |P u G|; 1 when both masks are empty.
inline double jss(const Mask& P, const Mask& G) {
  const auto c = overlap_counts(P, G);
  const std::size_t uni = c.pred + c.truth - c.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.both) / static_cast<double>(uni);
}

inline std::vector<Coord> surface_extract(const Mask& m) {
  const auto [D, H, W] = m.extents;
  std::vector<Coord> out;
  auto fg = [&](long z, long y, long x) {
    if (z < 0 || y < 0 || x < 0 || z >= long(D) || y >= long(H) || x >= long(W)) return false;
    return m.data[m.index(z, y, x)] != 0;
  };
  for (long z = 0; z < long(D); ++z)
    for (long y = 0; y < long(H); ++y)
      for (long x = 0; x < long(W); ++x) {
        if (!fg(z, y, x)) continue;
        if (!fg(z - 1, y, x) || !fg(z + 1, y, x) || !fg(z, y - 1, x) || !fg(z, y + 1, x) || !fg(z, y, x - 1) ||
            !fg(z, y, x + 1))
          out.push_back({int(z), int(y), int(x)});
      }
  return out;
}

namespace detail {

// In-place 1-D squared distance transform (lower envelope of parabolas) over
// n samples with stride, sample spacing h.
inline void edt_1d(double* f, std::size_t n, std::size_t stride, double h, std::vector<double>& buf,
                   std::vector<int>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  buf.resize(n);
  v.resize(n);
  z.resize(n + 1);
  for (std::size_t i = 0; i < n; ++i) buf[i] = f[i * stride];
  const double h2 = h * h;
  int k = -1;
  for (int q = 0; q < int(n); ++q) {
    if (buf[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((buf[q] + h2 * q * q) - (buf[p] + h2 * p * p)) / (2.0 * h2 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everywhere
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) return;  // no sites on this line
  int j = 0;
  for (int q = 0; q < int(n); ++q) {
    while (z[j + 1] < q) ++j;
    const double d = h * (q - v[j]);
    f[q * stride] = d * d + buf[v[j]];
  }
}

}  // namespace detail

/// Exact squared Euclidean distance from every voxel to the nearest site
/// (non-zero voxel of `sites`), infinity if there are none.
inline std::vector<double> squared_distance_transform(const Mask& sites) {
  const auto [D, H, W] = sites.extents;
  std::vector<double> f(sites.size());
  for (std::size_t i = 0; i < f.size(); ++i)
    f[i] = sites.data[i] ? 0.0 : std::numeric_limits<double>::infinity();
  std::vector<double> buf, z;
  std::vector<int> v;
  for (std::size_t a = 0; a < D; ++a)
    for (std::size_t b = 0; b < H; ++b) detail::edt_1d(&f[(a * H + b) * W], W, 1, sites.spacing[2], buf, v, z);
  for (std::size_t a = 0; a < D; ++a)
    for (std::size_t c = 0; c < W; ++c) detail::edt_1d(&f[a * H * W + c], H, W, sites.spacing[1], buf, v, z);
  for (std::size_t b = 0; b < H; ++b)
    for (std::size_t c = 0; c < W; ++c) detail::edt_1d(&f[b * W + c], D, H * W, sites.spacing[0], buf, v, z);
  return f;
}

/// Distances from each surface voxel of P to the surface of G (unsorted).
inline std::vector<double> directed_surface_distances(const Mask& P, const Mask& G) {
  require_same_extents(P.extents, G.extents);
  const auto sp = surface_extract(P);
  const auto sg = surface_extract(G);
  if (sp.empty() || sg.empty()) return {};
  Mask gsurf(G.extents);
  gsurf.spacing = G.spacing;
  for (const auto& c : sg) gsurf.at(c[0], c[1], c[2]) = 1;
  const auto dt = squared_distance_transform(gsurf);
  std::vector<double> d;
  d.reserve(sp.size());
  for (const auto& c : sp) d.push_back(std::sqrt(dt[gsurf.index(c[0], c[1], c[2])]));
  return d;
}

/// Nearest-rank percentile: element ceil(percent * n / 100) (1-based) of the
/// sorted list, computed in integers.
inline double nearest_rank_percentile(std::vector<double> values, unsigned percent) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const std::size_t rank = std::clamp<std::size_t>((percent * n + 99) / 100, 1, n);
  return values[rank - 1];
}

inline std::optional<double> hd95(const Mask& P, const Mask& G) {
  auto pg = directed_surface_distances(P, G);
  auto gp = directed_surface_distances(G, P);
  if (pg.empty() || gp.empty()) return std::nullopt;
  return std::max(nearest_rank_percentile(std::move(pg), 95), nearest_rank_percentile(std::move(gp), 95));
}

inline std::optional<double> assd(const Mask& P, const Mask& G) {
  const auto pg = directed_surface_distances(P, G);
  const auto gp = directed_surface_distances(G, P);
  if (pg.empty() || gp.empty()) return std::nullopt;
  double a = 0.0, b = 0.0;
  for (double v : pg) a += v;
  for (double v : gp) b += v;
  return (a / static_cast<double>(pg.size()) + b / static_cast<double>(gp.size())) / 2.0;
}

/// Binary mask of voxels labelled `cls`.
inline Mask class_mask(const LabelMap& l, std::uint8_t cls) {
  Mask m(l.extents);
  m.spacing = l.spacing;
  for (std::size_t i = 0; i < l.size(); ++i) m.data[i] = l.data[i] == cls;
  return m;
}

inline std::vector<std::string> default_class_names(std::size_t num_classes) {
  static const std::vector<std::string> names{"background", "cochlea", "facial_nerve", "ossicles",
                                              "semicircular_canal", "vestibule"};
  std::vector<std::string> out;
  for (std::size_t c = 0; c < num_classes; ++c) out.push_back(c < names.size() ? names[c] : "class" + std::to_string(c));
  return out;
}

struct StructureMetrics {
  std::string name;
  std::optional<double> dss, jss, hd95, assd;
  bool in_prediction = false, in_ground_truth = false;
  /// Set when the structure is missing from either map; distances are then undefined.
  bool absent() const { return !in_prediction || !in_ground_truth; }
};

struct MetricsReport {
  std::vector<StructureMetrics> structures;  // foreground classes, in class order
  std::optional<double> mean_dss, mean_jss, mean_hd95, mean_assd;

  /// Line-oriented record: one line per structure, then the averages; "-" marks a missing value.
  std::string to_text() const {
    auto fmt = [](const std::optional<double>& v) {
      if (!v) return std::string("-");
      std::ostringstream os;
      os.precision(6);
      os << *v;
      return os.str();
    };
    std::ostringstream os;
    for (const auto& s : structures)
      os << s.name << " dss=" << fmt(s.dss) << " jss=" << fmt(s.jss) << " hd95=" << fmt(s.hd95)
         << " assd=" << fmt(s.assd) << (s.absent() ? " absent" : "") << "\n";
    os << "average dss=" << fmt(mean_dss) << " jss=" << fmt(mean_jss) << " hd95=" << fmt(mean_hd95)
       << " assd=" << fmt(mean_assd) << "\n";
    return os.str();
  }

  nlohmann::json to_json() const {
    auto val = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json classes = nlohmann::json::object();
    for (const auto& s : structures)
      classes[s.name] = {{"dss", val(s.dss)}, {"jss", val(s.jss)}, {"hd95", val(s.hd95)}, {"assd", val(s.assd)},
                         {"absent", s.absent()}};
    return {{"classes", classes},
            {"average", {{"dss", val(mean_dss)}, {"jss", val(mean_jss)}, {"hd95", val(mean_hd95)}, {"assd", val(mean_assd)}}}};
  }
};

namespace detail {

inline std::optional<double> mean_of(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : v)
    if (x) {
      s += *x;
      ++n;
    }
  if (!n) return std::nullopt;
  return s / static_cast<double>(n);
}

}  // namespace detail

inline void finalize_averages(MetricsReport& r) {
  std::vector<std::optional<double>> d, j, h, a;
  for (const auto& s : r.structures) {
    d.push_back(s.dss);
    j.push_back(s.jss);
    h.push_back(s.hd95);
    a.push_back(s.assd);
  }
  r.mean_dss = detail::mean_of(d);
  r.mean_jss = detail::mean_of(j);
  r.mean_hd95 = detail::mean_of(h);
  r.mean_assd = detail::mean_of(a);
}

/// All four metrics per foreground class (1 .. num_classes-1).
inline MetricsReport evaluate(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes,
                              const std::vector<std::string>& names = {}) {
  require_same_extents(pred.extents, gt.extents);
  for (const auto* m : {&pred, &gt})
    for (auto v : m->data)
      if (v >= num_classes)
        throw std::invalid_argument("label " + std::to_string(v) + " outside 0.." + std::to_string(num_classes - 1));
  const auto nm = names.empty() ? default_class_names(num_classes) : names;
  MetricsReport r;
  for (std::size_t c = 1; c < num_classes; ++c) {
    auto P = class_mask(pred, static_cast<std::uint8_t>(c));
    auto G = class_mask(gt, static_cast<std::uint8_t>(c));
    G.spacing = P.spacing = gt.spacing;
    const auto cnt = overlap_counts(P, G);
    StructureMetrics s;
    s.name = nm.at(c);
    s.in_prediction = cnt.pred > 0;
    s.in_ground_truth = cnt.truth > 0;
    s.dss = dss(P, G);
    s.jss = jss(P, G);
    if (!s.absent()) {
      s.hd95 = hd95(P, G);
      s.assd = assd(P, G);
    }
    r.structures.push_back(std::move(s));
  }
  finalize_averages(r);
  return r;
}

/// Mean over reports, per structure and metric, of the defined values.
inline MetricsReport aggregate(const std::vector<MetricsReport>& reports) {
  MetricsReport out;
  if (reports.empty()) return out;
  for (std::size_t k = 0; k < reports.front().structures.size(); ++k) {
    std::vector<std::optional<double>> d, j, h, a;
    StructureMetrics s;
    s.name = reports.front().structures[k].name;
    for (const auto& r : reports) {
      const auto& x = r.structures.at(k);
      d.push_back(x.dss);
      j.push_back(x.jss);
      h.push_back(x.hd95);
      a.push_back(x.assd);
      s.in_prediction |= x.in_prediction;
      s.in_ground_truth |= x.in_ground_truth;
    }
    s.dss = detail::mean_of(d);
    s.jss = detail::mean_of(j);
    s.hd95 = detail::mean_of(h);
    s.assd = detail::mean_of(a);
    out.structures.push_back(std::move(s));
  }
  finalize_averages(out);
  return out;
}

}  // namespace wsc

#pragma once

// Intensity volumes and label maps, plus the WSCVOL1 file format:
//
//   magic "WSCVOL1\0" (8 bytes) | version u32 | dtype u32 (0 float32, 1 uint8)
//   | rank u32 (3) | extents u64 x 3 (D, H, W) | spacing f32 x 3
//   | payload, row-major with W fastest
//
// All integers little-endian.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "wsc/binary_io.hpp"

namespace wsc {

template <class V>
struct Grid {
  std::array<std::size_t, 3> extents{};
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::vector<V> data;

  Grid() = default;
  explicit Grid(std::array<std::size_t, 3> ext, V fill = V{}) : extents(ext), data(ext[0] * ext[1] * ext[2], fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * extents[1] + y) * extents[2] + x; }
  V& at(std::size_t z, std::size_t y, std::size_t x) { return data[index(z, y, x)]; }
  const V& at(std::size_t z, std::size_t y, std::size_t x) const { return data[index(z, y, x)]; }

  bool operator==(const Grid&) const = default;
};

using Volume = Grid<float>;
using LabelMap = Grid<std::uint8_t>;

inline constexpr char kVolumeMagic[8] = {'W', 'S', 'C', 'V', 'O', 'L', '1', '\0'};
inline constexpr std::uint32_t kVolumeVersion = 1;

enum class VolumeDtype : std::uint32_t { Float32 = 0, UInt8 = 1 };

namespace detail {

template <class V>
std::vector<unsigned char> encode_volume(const Grid<V>& g, VolumeDtype dtype) {
  if (g.data.size() != g.extents[0] * g.extents[1] * g.extents[2])
    throw std::invalid_argument("volume payload does not match its extents");
  ByteWriter w;
  w.bytes(kVolumeMagic, 8);
  w.u32(kVolumeVersion);
  w.u32(static_cast<std::uint32_t>(dtype));
  w.u32(3);
  for (auto e : g.extents) w.u64(e);
  for (auto s : g.spacing) w.f32(s);
  if constexpr (std::is_same_v<V, float>) {
    for (float v : g.data) w.f32(v);
  } else {
    w.bytes(g.data.data(), g.data.size());
  }
  return w.buffer();
}

}  // namespace detail

inline std::vector<unsigned char> encode_volume(const Volume& v) {
  return detail::encode_volume(v, VolumeDtype::Float32);
}
inline std::vector<unsigned char> encode_volume(const LabelMap& l) {
  return detail::encode_volume(l, VolumeDtype::UInt8);
}

template <class V>
void write_volume(const std::string& path, const Grid<V>& g) {
  save_bytes(path, encode_volume(g));
}

using AnyVolume = std::variant<Volume, LabelMap>;

inline AnyVolume decode_volume(ByteReader r) {
  char magic[8];
  r.bytes(magic, 8);
  if (!std::equal(magic, magic + 8, kVolumeMagic)) throw FormatError("not a WSCVOL1 volume file (bad magic)");
  const auto version = r.u32();
  if (version != kVolumeVersion) throw FormatError("unsupported volume version " + std::to_string(version));
  const auto dtype = r.u32();
  if (dtype > 1) throw FormatError("unsupported volume dtype " + std::to_string(dtype));
  const auto rank = r.u32();
  if (rank != 3) throw FormatError("volume rank must be 3, got " + std::to_string(rank));
  std::array<std::size_t, 3> ext{};
  for (auto& e : ext) {
    e = static_cast<std::size_t>(r.u64());
    if (e == 0) throw FormatError("volume has a zero extent");
  }
  std::array<float, 3> spacing{};
  for (auto& s : spacing) s = r.f32();
  const std::size_t count = ext[0] * ext[1] * ext[2];
  const std::size_t expected = count * (dtype == 0 ? 4 : 1);
  if (r.remaining() != expected)
    throw FormatError("volume payload size mismatch: expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(r.remaining()));
  if (dtype == 0) {
    Volume v(ext);
    v.spacing = spacing;
    for (auto& x : v.data) x = r.f32();
    return v;
  }
  LabelMap l(ext);
  l.spacing = spacing;
  r.bytes(l.data.data(), count);
  return l;
}

inline AnyVolume read_volume(const std::string& path) { return decode_volume(ByteReader::from_file(path)); }

inline Volume read_intensity(const std::string& path) {
  auto v = read_volume(path);
  if (!std::holds_alternative<Volume>(v)) throw FormatError(path + ": expected a float32 intensity volume");
  return std::get<Volume>(std::move(v));
}

inline LabelMap read_labels(const std::string& path) {
  auto v = read_volume(path);
  if (!std::holds_alternative<LabelMap>(v)) throw FormatError(path + ": expected a uint8 label volume");
  return std::get<LabelMap>(std::move(v));
}

}  // namespace wsc

#pragma once

// Checkpoint files:
//
//   magic "WSCCKPT1" | version u32 | config length u32 | config key=value text
//   | records to end of file:
//     name length u32 | name | rank u32 | extents u64 x rank | float32 data
//
// Parameters are stored under their registered names in registration order.
// Optimizer moments, when present, follow as "optim.m.<name>" and
// "optim.v.<name>" records, with the step counter in the config block as
// optim.step.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "wsc/binary_io.hpp"
#include "wsc/config.hpp"
#include "wsc/network.hpp"
#include "wsc/optim.hpp"

namespace wsc {

inline constexpr char kCheckpointMagic[8] = {'W', 'S', 'C', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kOptimStepKey = "optim.step";

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct CheckpointData {
  KeyValues config;
  std::vector<CheckpointRecord> records;

  std::optional<std::string> config_value(const std::string& key) const {
    for (const auto& [k, v] : config)
      if (k == key) return v;
    return std::nullopt;
  }
};

inline std::vector<unsigned char> encode_checkpoint(const CheckpointData& ck) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, 8);
  w.u32(kCheckpointVersion);
  const auto text = format_key_values(ck.config);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.str(text);
  for (const auto& r : ck.records) {
    if (numel(r.shape) != r.data.size()) throw std::invalid_argument("checkpoint record " + r.name + " has inconsistent size");
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.str(r.name);
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (auto e : r.shape) w.u64(e);
    for (float v : r.data) w.f32(v);
  }
  return w.buffer();
}

inline CheckpointData decode_checkpoint(ByteReader r) {
  char magic[8];
  r.bytes(magic, 8);
  if (!std::equal(magic, magic + 8, kCheckpointMagic)) throw FormatError("not a WSCCKPT1 checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + " not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  CheckpointData ck;
  const auto len = r.u32();
  ck.config = parse_key_values(r.str(len), "checkpoint config");
  while (!r.at_end()) {
    CheckpointRecord rec;
    rec.name = r.str(r.u32());
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError("checkpoint record " + rec.name + ": bad rank " + std::to_string(rank));
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      rec.shape.push_back(static_cast<std::size_t>(r.u64()));
      count *= rec.shape.back();
    }
    r.need(count * 4);
    rec.data.resize(count);
    for (auto& v : rec.data) v = r.f32();
    ck.records.push_back(std::move(rec));
  }
  return ck;
}

template <class T>
CheckpointData make_checkpoint(const Model<T>& model, const KeyValues& config, const AdamW<T>* optim = nullptr) {
  CheckpointData ck;
  ck.config = config;
  if (optim) ck.config.emplace_back(kOptimStepKey, std::to_string(optim->step_count()));
  const auto& items = model.params().items();
  for (const auto& [name, t] : items) ck.records.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  if (optim) {
    for (std::size_t k = 0; k < items.size(); ++k) {
      const auto& [name, t] = items[k];
      const auto& m = optim->first_moments()[k];
      const auto& v = optim->second_moments()[k];
      ck.records.push_back({"optim.m." + name, t.shape(), std::vector<float>(m.begin(), m.end())});
      ck.records.push_back({"optim.v." + name, t.shape(), std::vector<float>(v.begin(), v.end())});
    }
  }
  return ck;
}

template <class T>
void save_checkpoint(const std::string& path, const Model<T>& model, const KeyValues& config,
                     const AdamW<T>* optim = nullptr) {
  save_bytes(path, encode_checkpoint(make_checkpoint(model, config, optim)));
}

inline CheckpointData read_checkpoint(const std::string& path) { return decode_checkpoint(ByteReader::from_file(path)); }

/// Copies records into the model's parameters. Every parameter must be
/// present exactly once with a matching shape, and no unknown non-optimizer
/// record may remain.
template <class T>
void load_parameters(Model<T>& model, const CheckpointData& ck) {
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : ck.records) {
    if (r.name.rfind("optim.", 0) == 0) continue;
    if (!by_name.emplace(r.name, &r).second) throw FormatError("checkpoint lists parameter " + r.name + " twice");
  }
  auto& items = model.params().items();
  for (auto& [name, t] : items) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing parameter " + name);
    if (it->second->shape != t.shape())
      throw FormatError("parameter " + name + ": checkpoint shape [" + shape_str(it->second->shape) + "] vs model [" +
                        shape_str(t.shape()) + "]");
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->data[i]);
  }
  if (by_name.size() != items.size()) {
    for (const auto& r : ck.records)
      if (r.name.rfind("optim.", 0) != 0 && !model.params().contains(r.name))
        throw FormatError("checkpoint has unexpected parameter " + r.name);
  }
}

/// Restores optimizer moments and step count; false when the checkpoint has none.
template <class T>
bool load_optimizer(AdamW<T>& optim, const Model<T>& model, const CheckpointData& ck) {
  const auto step = ck.config_value(kOptimStepKey);
  if (!step) return false;
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : ck.records) by_name.emplace(r.name, &r);
  const auto& items = model.params().items();
  for (std::size_t k = 0; k < items.size(); ++k) {
    for (const char* which : {"m", "v"}) {
      const auto key = std::string("optim.") + which + "." + items[k].first;
      auto it = by_name.find(key);
      if (it == by_name.end()) throw FormatError("checkpoint is missing optimizer record " + key);
      auto& dst = (which[0] == 'm' ? optim.first_moments() : optim.second_moments())[k];
      if (it->second->data.size() != dst.size()) throw FormatError("optimizer record " + key + " has the wrong size");
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->data[i]);
    }
  }
  optim.set_step_count(std::stoull(*step));
  return true;
}

/// Builds a model from the checkpoint's own configuration and loads it.
template <class T>
Model<T> load_model(const CheckpointData& ck) {
  const auto cfg = network_from_key_values(ck.config);
  Rng rng(0);
  Model<T> model(cfg, rng);
  load_parameters(model, ck);
  return model;
}

}  // namespace wsc

#pragma once

// Run configuration and its key=value text form.
//
//   # comment
//   network.input_extent = 32
//   network.window_size = 2
//   wsc.composition = WSC
//   wsc.depths = 1,1,3,1
//   train.batch_size = 4
//
// The same form is embedded in checkpoints, so a checkpoint carries the
// configuration that built it.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wsc/dataset.hpp"
#include "wsc/network.hpp"
#include "wsc/optim.hpp"

namespace wsc {

/// Ordered key=value pairs.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline KeyValues parse_key_values(const std::string& text, const std::string& origin = "config") {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    auto key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    kv.emplace_back(std::move(key), detail::trim(line.substr(eq + 1)));
  }
  return kv;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path);
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

enum class AugmentMode { None, Expand, InPlace };

struct TrainOptions {
  std::size_t epochs = 40;
  std::size_t batch_size = 4;
  std::size_t folds = 4;
  std::uint64_t seed = 0;
  AdamWOptions optim{};
  /// Stop after this many optimizer steps; 0 means no limit.
  std::size_t max_steps = 0;
  /// Stop once validation mean foreground DSS reaches this; 0 disables.
  double target_dss = 0.0;
  std::size_t val_every = 1;  // epochs
  AugmentMode augment = AugmentMode::None;  // in-place augmentation during training
};

struct RunConfig {
  NetworkConfig network{};
  TrainOptions train{};
  DatasetOptions data{};
  std::uint64_t data_seed = 0;
  AugmentMode data_augment = AugmentMode::Expand;  // how gen-data applies mirror/shift copies

  RunConfig() { data.phantom.extent = network.input_extent; }

  void validate() const {
    network.validate();
    if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (train.folds < 2) throw ConfigError("train.folds must be >= 2");
    if (train.val_every < 1) throw ConfigError("train.val_every must be >= 1");
    if (!(train.optim.lr > 0)) throw ConfigError("train.lr must be positive");
    if (data.phantom.extent != network.input_extent)
      throw ConfigError("data.extent=" + std::to_string(data.phantom.extent) +
                        " differs from network.input_extent=" + std::to_string(network.input_extent));
  }
};

namespace detail {

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

inline AugmentMode parse_augment(const std::string& key, const std::string& v) {
  if (v == "none") return AugmentMode::None;
  if (v == "expand") return AugmentMode::Expand;
  if (v == "inplace") return AugmentMode::InPlace;
  throw ConfigError(key + ": expected none, expand or inplace, got '" + v + "'");
}

inline std::string augment_name(AugmentMode m) {
  switch (m) {
    case AugmentMode::None: return "none";
    case AugmentMode::Expand: return "expand";
    case AugmentMode::InPlace: return "inplace";
  }
  return "none";
}

inline std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

/// Applies one key; unknown keys are an error.
inline void apply_key(RunConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  auto& n = c.network;
  auto& t = c.train;
  if (key == "network.input_extent") {
    n.input_extent = parse_size(key, v);
    c.data.phantom.extent = n.input_extent;
  } else if (key == "network.base_channels") n.base_channels = parse_size(key, v);
  else if (key == "network.num_levels") n.num_levels = parse_size(key, v);
  else if (key == "network.num_classes") n.num_classes = parse_size(key, v);
  else if (key == "network.norm_groups") n.norm_groups = parse_size(key, v);
  else if (key == "network.window_size" || key == "wsc.window_size") n.wsc.window_size = parse_size(key, v);
  else if (key == "network.precision") {
    if (v == "float32") n.precision = Precision::Float32;
    else if (v == "float64") n.precision = Precision::Float64;
    else throw ConfigError(key + ": expected float32 or float64, got '" + v + "'");
  } else if (key == "wsc.composition") n.wsc.composition = v;
  else if (key == "wsc.depths") n.wsc.depths = parse_list(key, v);
  else if (key == "wsc.heads") n.wsc.heads = parse_size(key, v);
  else if (key == "wsc.mlp_ratio") n.wsc.mlp_ratio = parse_size(key, v);
  else if (key == "train.epochs") t.epochs = parse_size(key, v);
  else if (key == "train.batch_size") t.batch_size = parse_size(key, v);
  else if (key == "train.folds") t.folds = parse_size(key, v);
  else if (key == "train.seed") t.seed = parse_size(key, v);
  else if (key == "train.lr") t.optim.lr = parse_double(key, v);
  else if (key == "train.beta1") t.optim.beta1 = parse_double(key, v);
  else if (key == "train.beta2") t.optim.beta2 = parse_double(key, v);
  else if (key == "train.eps") t.optim.eps = parse_double(key, v);
  else if (key == "train.weight_decay") t.optim.weight_decay = parse_double(key, v);
  else if (key == "train.grad_clip") t.optim.max_grad_norm = parse_double(key, v);
  else if (key == "train.max_steps") t.max_steps = parse_size(key, v);
  else if (key == "train.target_dss") t.target_dss = parse_double(key, v);
  else if (key == "train.val_every") t.val_every = parse_size(key, v);
  else if (key == "train.augment") {
    t.augment = parse_augment(key, v);
    if (t.augment == AugmentMode::Expand) throw ConfigError(key + ": use data.augment=expand for expansion");
  } else if (key == "data.count") c.data.count = parse_size(key, v);
  else if (key == "data.extent") c.data.phantom.extent = parse_size(key, v);
  else if (key == "data.mirror") c.data.mirror = parse_bool(key, v);
  else if (key == "data.shifts") c.data.shifts = parse_size(key, v);
  else if (key == "data.noise") c.data.phantom.noise = parse_double(key, v);
  else if (key == "data.seed") c.data_seed = parse_size(key, v);
  else if (key == "data.augment") {
    c.data_augment = parse_augment(key, v);
    if (c.data_augment == AugmentMode::InPlace) throw ConfigError(key + ": use train.augment=inplace for in-place augmentation");
  } else
    throw ConfigError("unknown config key '" + key + "'");
}

inline void apply_config(RunConfig& c, const KeyValues& kv) {
  for (const auto& [k, v] : kv) apply_key(c, k, v);
}

/// "key=value" override as given on the command line.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto kv = parse_key_values(assignment, "override");
  if (kv.size() != 1) throw ConfigError("override must be a single key=value, got '" + assignment + "'");
  apply_key(c, kv[0].first, kv[0].second);
}

inline KeyValues network_key_values(const NetworkConfig& n) {
  std::string depths;
  for (std::size_t i = 0; i < n.wsc.depths.size(); ++i) depths += (i ? "," : "") + std::to_string(n.wsc.depths[i]);
  return {{"network.input_extent", std::to_string(n.input_extent)},
          {"network.base_channels", std::to_string(n.base_channels)},
          {"network.num_levels", std::to_string(n.num_levels)},
          {"network.num_classes", std::to_string(n.num_classes)},
          {"network.norm_groups", std::to_string(n.norm_groups)},
          {"network.window_size", std::to_string(n.wsc.window_size)},
          {"network.precision", n.precision == Precision::Float32 ? "float32" : "float64"},
          {"wsc.composition", n.wsc.composition},
          {"wsc.depths", depths},
          {"wsc.heads", std::to_string(n.wsc.heads)},
          {"wsc.mlp_ratio", std::to_string(n.wsc.mlp_ratio)}};
}

inline KeyValues to_key_values(const RunConfig& c) {
  using detail::num;
  auto kv = network_key_values(c.network);
  const auto& t = c.train;
  const KeyValues rest{{"train.epochs", std::to_string(t.epochs)},
                       {"train.batch_size", std::to_string(t.batch_size)},
                       {"train.folds", std::to_string(t.folds)},
                       {"train.seed", std::to_string(t.seed)},
                       {"train.lr", num(t.optim.lr)},
                       {"train.beta1", num(t.optim.beta1)},
                       {"train.beta2", num(t.optim.beta2)},
                       {"train.eps", num(t.optim.eps)},
                       {"train.weight_decay", num(t.optim.weight_decay)},
                       {"train.grad_clip", num(t.optim.max_grad_norm)},
                       {"train.max_steps", std::to_string(t.max_steps)},
                       {"train.target_dss", num(t.target_dss)},
                       {"train.val_every", std::to_string(t.val_every)},
                       {"train.augment", detail::augment_name(t.augment)},
                       {"data.count", std::to_string(c.data.count)},
                       {"data.extent", std::to_string(c.data.phantom.extent)},
                       {"data.mirror", c.data.mirror ? "true" : "false"},
                       {"data.shifts", std::to_string(c.data.shifts)},
                       {"data.noise", num(c.data.phantom.noise)},
                       {"data.seed", std::to_string(c.data_seed)},
                       {"data.augment", detail::augment_name(c.data_augment)}};
  kv.insert(kv.end(), rest.begin(), rest.end());
  return kv;
}

/// Network configuration from a key=value block; non-network keys are ignored.
inline NetworkConfig network_from_key_values(const KeyValues& kv) {
  RunConfig c;
  for (const auto& [k, v] : kv)
    if (k.rfind("network.", 0) == 0 || k.rfind("wsc.", 0) == 0) apply_key(c, k, v);
  return c.network;
}

}  // namespace wsc

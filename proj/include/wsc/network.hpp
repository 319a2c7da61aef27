#pragma once

// The full encoder-decoder:
//
//   ConvBlock -> [DenseBlock_i -> Down_i] x (L-1) -> DenseBlock_L -> WSC
//   -> ResBlock_L -> [Up_i -> skip_fuse(DenseBlock_i) -> ResBlock_i] x (L-1)
//   -> 1x1x1 classifier -> softmax over classes
//
// With the default configuration (E=96, C0=32, L=4, 6 classes) the layer
// schedule is the 17-row table reproduced by shape_trace().

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsc/attention.hpp"
#include "wsc/blocks.hpp"
#include "wsc/params.hpp"

namespace wsc {

enum class Precision { Float32, Float64 };

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NetworkConfig {
  std::size_t input_extent = 96;
  std::size_t base_channels = 32;
  std::size_t num_levels = 4;
  std::size_t num_classes = 6;
  std::size_t norm_groups = 8;
  WscConfig wsc{};
  Precision precision = Precision::Float32;

  std::size_t channels_at(std::size_t level) const { return base_channels << level; }
  std::size_t extent_at(std::size_t level) const { return input_extent >> level; }
  std::size_t bottleneck_extent() const { return extent_at(num_levels - 1); }
  std::size_t bottleneck_channels() const { return channels_at(num_levels - 1); }

  void validate() const {
    if (num_levels < 1) throw ConfigError("network.num_levels must be >= 1");
    if (num_classes < 2) throw ConfigError("network.num_classes must be >= 2");
    if (base_channels == 0) throw ConfigError("network.base_channels must be positive");
    if (norm_groups == 0 || base_channels % norm_groups)
      throw ConfigError("network.base_channels=" + std::to_string(base_channels) + " not divisible by norm_groups=" +
                        std::to_string(norm_groups));
    if (input_extent == 0) throw ConfigError("network.input_extent must be positive");
    for (std::size_t l = 1; l < num_levels; ++l) {
      const std::size_t ext = input_extent >> (l - 1);
      if (ext % 2)
        throw ConfigError("level " + std::to_string(l) + ": extent " + std::to_string(ext) +
                          " is odd and cannot be halved (input_extent must be divisible by 2^(num_levels-1))");
    }
    try {
      wsc.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    const std::size_t be = bottleneck_extent();
    if (be % wsc.window_size)
      throw ConfigError("level " + std::to_string(num_levels) + ": bottleneck extent " + std::to_string(be) +
                        " not divisible by window_size " + std::to_string(wsc.window_size));
    if (bottleneck_channels() % wsc.heads)
      throw ConfigError("bottleneck channels " + std::to_string(bottleneck_channels()) + " not divisible by heads " +
                        std::to_string(wsc.heads));
  }
};

struct TraceRow {
  std::string layer;
  Shape input, output;  // [C, D, H, W]
};

/// "32×96×96×96" style rendering used by the layer table.
inline std::string trace_shape_str(const Shape& s) { return shape_str(s, "×"); }

inline std::string format_trace_row(const TraceRow& r) {
  return r.layer + "\t" + trace_shape_str(r.input) + "\t" + trace_shape_str(r.output);
}

/// Symbolic per-layer shape trace, no activations allocated.
inline std::vector<TraceRow> shape_trace(const NetworkConfig& cfg) {
  cfg.validate();
  const std::size_t L = cfg.num_levels;
  auto s = [&](std::size_t level, std::size_t c) {
    const auto e = cfg.extent_at(level);
    return Shape{c, e, e, e};
  };
  std::vector<TraceRow> rows;
  rows.push_back({"ConvBlock", s(0, 1), s(0, cfg.channels_at(0))});
  for (std::size_t l = 0; l < L; ++l) {
    const auto c = cfg.channels_at(l);
    rows.push_back({"Dense Block" + std::to_string(l + 1), s(l, c), s(l, c)});
    if (l + 1 < L) rows.push_back({"Down" + std::to_string(l + 1), s(l, c), s(l + 1, 2 * c)});
  }
  const auto bc = cfg.bottleneck_channels();
  rows.push_back({"WSC", s(L - 1, bc), s(L - 1, bc)});
  for (std::size_t l = L; l-- > 0;) {
    const auto c = cfg.channels_at(l);
    rows.push_back({"Res Block" + std::to_string(l + 1), s(l, c), s(l, c)});
    if (l > 0) rows.push_back({"Up" + std::to_string(l), s(l, c), s(l - 1, c / 2)});
  }
  rows.push_back({"Softmax", s(0, cfg.channels_at(0)), s(0, cfg.num_classes)});
  return rows;
}

template <class T>
class Model {
 public:
  Model(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t L = cfg_.num_levels, g = cfg_.norm_groups;
    conv_block_ = ConvBlock<T>(params_, "encoder.conv_block", 1, cfg_.channels_at(0), g, rng);
    for (std::size_t l = 0; l < L; ++l) {
      const auto c = cfg_.channels_at(l);
      dense_.emplace_back(params_, "encoder.dense" + std::to_string(l + 1), c, g, rng);
      if (l + 1 < L) down_.emplace_back(params_, "encoder.down" + std::to_string(l + 1), c, rng);
    }
    wsc_ = WscBottleneck<T>(params_, "bottleneck.wsc", cfg_.bottleneck_channels(), cfg_.wsc, rng);
    // decoder, bottom-up: res_[l] at level l, up_[l] maps level l+1 -> l
    res_.resize(L);
    up_.resize(L > 0 ? L - 1 : 0);
    for (std::size_t l = L; l-- > 0;) {
      const auto c = cfg_.channels_at(l);
      res_[l] = ResBlock<T>(params_, "decoder.res" + std::to_string(l + 1), c, g, rng);
      if (l > 0) up_[l - 1] = UpBlock<T>(params_, "decoder.up" + std::to_string(l), c, rng);
    }
    head_ = Conv3dLayer<T>(params_, "head.classifier", cfg_.channels_at(0), cfg_.num_classes, 1, rng);
  }

  const NetworkConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Class logits before the softmax, [N, classes, E, E, E].
  Tensor<T> logits(const Tensor<T>& x) const {
    const auto E = cfg_.input_extent;
    if (x.rank() != 5 || x.dim(1) != 1 || x.dim(2) != E || x.dim(3) != E || x.dim(4) != E)
      throw ShapeError("model expects [N, 1, " + std::to_string(E) + ", " + std::to_string(E) + ", " +
                       std::to_string(E) + "], got [" + shape_str(x.shape()) + "]");
    const std::size_t L = cfg_.num_levels;
    std::vector<Tensor<T>> skips(L);
    auto h = conv_block_(x);
    for (std::size_t l = 0; l < L; ++l) {
      h = dense_[l](h);
      skips[l] = h;
      if (l + 1 < L) h = down_[l](h);
    }
    h = wsc_(h);
    h = res_[L - 1](h);
    for (std::size_t l = L - 1; l-- > 0;) {
      h = up_[l](h);
      h = skip_fuse(h, skips[l]);
      h = res_[l](h);
    }
    return head_(h);
  }

  /// Per-voxel class probabilities.
  Tensor<T> forward(const Tensor<T>& x) const { return softmax(logits(x), 1); }

 private:
  NetworkConfig cfg_;
  ParamStore<T> params_;
  ConvBlock<T> conv_block_;
  std::vector<DenseBlock<T>> dense_;
  std::vector<PatchMerge<T>> down_;
  WscBottleneck<T> wsc_;
  std::vector<ResBlock<T>> res_;
  std::vector<UpBlock<T>> up_;
  Conv3dLayer<T> head_;
};

}  // namespace wsc

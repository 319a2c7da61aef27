#pragma once

// The standard set of float64 gradient checks, one per differentiable
// building block, plus an end-to-end check of a tiny network. Shared by the
// `gradcheck` command and the test suite.

#include <functional>
#include <string>
#include <vector>

#include "wsc/attention.hpp"
#include "wsc/blocks.hpp"
#include "wsc/conv.hpp"
#include "wsc/gradcheck.hpp"
#include "wsc/loss.hpp"
#include "wsc/network.hpp"
#include "wsc/ops.hpp"

namespace wsc {

struct GradCase {
  std::string name;
  double tolerance;
  std::function<GradCheckResult()> run;
};

struct GradCaseResult {
  std::string name;
  double tolerance;
  GradCheckResult result;
  bool passed() const { return result.checked > 0 && result.max_rel_error < tolerance; }
};

namespace detail {

// sum(y * r) for fixed random r: a scalar whose gradient exercises every output.
inline TensorD weighted_sum(const TensorD& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, TensorD::randn(y.shape(), rng)));
}

inline std::vector<TensorD> with_params(std::vector<TensorD> inputs, const ParamStore<double>& ps) {
  for (const auto& [_, t] : ps.items()) inputs.push_back(t);
  return inputs;
}

}  // namespace detail

inline std::vector<GradCase> standard_grad_cases(std::uint64_t seed = 0) {
  using detail::weighted_sum;
  using detail::with_params;
  constexpr double kTol = 1e-4, kNetTol = 1e-3;
  std::vector<GradCase> cases;

  cases.push_back({"conv3d", kTol, [seed] {
                     Rng rng(seed + 1);
                     auto x = TensorD::randn({2, 2, 4, 4, 3}, rng), w = TensorD::randn({3, 2, 3, 3, 3}, rng),
                          b = TensorD::randn({3}, rng);
                     auto s2 = TensorD::randn({2, 2, 2, 2, 2}, rng);
                     return grad_check(
                         [&] {
                           return add(weighted_sum(conv3d(x, w, b, 1, 1), 7),
                                      weighted_sum(conv3d(x, s2, TensorD(), 2, 0), 8));
                         },
                         {x, w, b, s2});
                   }});
  cases.push_back({"conv_transpose3d", kTol, [seed] {
                     Rng rng(seed + 2);
                     auto x = TensorD::randn({2, 3, 2, 3, 2}, rng), w = TensorD::randn({3, 2, 2, 2, 2}, rng),
                          b = TensorD::randn({2}, rng);
                     return grad_check([&] { return weighted_sum(conv_transpose3d(x, w, b, 2), 9); }, {x, w, b});
                   }});
  cases.push_back({"group_norm", kTol, [seed] {
                     Rng rng(seed + 3);
                     auto x = TensorD::randn({2, 4, 2, 3, 2}, rng), g = TensorD::randn({4}, rng),
                          b = TensorD::randn({4}, rng);
                     return grad_check([&] { return weighted_sum(group_norm(x, 2, g, b), 10); }, {x, g, b});
                   }});
  cases.push_back({"layer_norm", kTol, [seed] {
                     Rng rng(seed + 4);
                     auto x = TensorD::randn({3, 5, 6}, rng), g = TensorD::randn({6}, rng), b = TensorD::randn({6}, rng);
                     return grad_check([&] { return weighted_sum(layer_norm(x, g, b), 11); }, {x, g, b});
                   }});
  cases.push_back({"softmax", kTol, [seed] {
                     Rng rng(seed + 5);
                     auto x = TensorD::randn({3, 4, 5}, rng);
                     return grad_check(
                         [&] { return add(weighted_sum(softmax(x, 1), 12), weighted_sum(softmax(x, 2), 13)); }, {x});
                   }});
  for (char kind : {'W', 'S', 'C'}) {
    cases.push_back({std::string("attention_") + kind, kTol, [seed, kind] {
                       Rng rng(seed + 6 + kind);
                       ParamStore<double> ps;
                       WscConfig cfg;
                       cfg.heads = 2;
                       cfg.window_size = 2;
                       cfg.mlp_ratio = 2;
                       AttentionUnit<double> unit(ps, "u", static_cast<AttentionKind>(kind), 4, cfg, rng);
                       auto x = TensorD::randn({1, 4, 4, 2, 4}, rng);  // channels-last
                       return grad_check([&] { return weighted_sum(unit(x), 14); }, with_params({x}, ps));
                     }});
  }
  cases.push_back({"dense_block", kTol, [seed] {
                     Rng rng(seed + 7);
                     ParamStore<double> ps;
                     DenseBlock<double> blk(ps, "d", 4, 2, rng);
                     auto x = TensorD::randn({1, 4, 3, 3, 2}, rng);
                     return grad_check([&] { return weighted_sum(blk(x), 15); }, with_params({x}, ps));
                   }});
  cases.push_back({"res_block", kTol, [seed] {
                     Rng rng(seed + 8);
                     ParamStore<double> ps;
                     ResBlock<double> blk(ps, "r", 4, 2, rng);
                     auto x = TensorD::randn({1, 4, 3, 2, 3}, rng);
                     return grad_check([&] { return weighted_sum(blk(x), 16); }, with_params({x}, ps));
                   }});
  cases.push_back({"patch_merge_down", kTol, [seed] {
                     Rng rng(seed + 9);
                     ParamStore<double> ps;
                     PatchMerge<double> blk(ps, "p", 2, rng);
                     auto x = TensorD::randn({2, 2, 4, 2, 4}, rng);
                     return grad_check([&] { return weighted_sum(blk(x), 17); }, with_params({x}, ps));
                   }});
  cases.push_back({"soft_dice_loss", kTol, [seed] {
                     Rng rng(seed + 10);
                     auto logits = TensorD::randn({2, 4, 3, 2, 2}, rng);
                     std::vector<double> t(logits.numel(), 0.0);
                     const std::size_t V = 12;
                     for (std::size_t n = 0; n < 2; ++n)
                       for (std::size_t v = 0; v < V; ++v) t[(n * 4 + rng.below(4)) * V + v] = 1.0;
                     auto target = TensorD::from_data(logits.shape(), t);
                     return grad_check([&] { return soft_dice_loss(softmax(logits, 1), target); }, {logits});
                   }});
  cases.push_back({"network_end_to_end", kNetTol, [seed] {
                     NetworkConfig cfg;
                     cfg.input_extent = 8;
                     cfg.base_channels = 4;
                     cfg.num_levels = 2;
                     cfg.norm_groups = 2;
                     cfg.wsc.heads = 2;
                     cfg.wsc.depths = {1};
                     Rng rng(seed + 11);
                     Model<double> model(cfg, rng);
                     auto x = TensorD::randn({1, 1, 8, 8, 8}, rng);
                     LabelMap l({8, 8, 8});
                     for (auto& v : l.data) v = static_cast<std::uint8_t>(rng.below(cfg.num_classes));
                     const auto target = one_hot<double>({&l}, cfg.num_classes);
                     GradCheckOptions opt;
                     opt.max_coords_per_input = 6;
                     opt.seed = seed;
                     return grad_check([&] { return soft_dice_loss(model.forward(x), target); },
                                       detail::with_params({x}, model.params()), opt);
                   }});
  return cases;
}

inline std::vector<GradCaseResult> run_grad_suite(std::uint64_t seed = 0) {
  std::vector<GradCaseResult> out;
  for (const auto& c : standard_grad_cases(seed)) out.push_back({c.name, c.tolerance, c.run()});
  return out;
}

}  // namespace wsc

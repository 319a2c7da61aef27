// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Each criterion is timed against its runtime budget.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "../attention_checks.hpp"
#include "../oracles.hpp"
#include "wsc/checkpoint.hpp"
#include "wsc/config.hpp"
#include "wsc/grad_suite.hpp"
#include "wsc/metrics.hpp"
#include "wsc/trainer.hpp"

using namespace wsc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("wsc_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Outcome shape_trace_conformance() {
  Outcome o;
  std::ifstream in(WSC_FIXTURE_DIR "/layer_table.txt");
  o.require(static_cast<bool>(in), "fixture missing");
  std::vector<std::string> expected;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) expected.push_back(line);
  const auto rows = shape_trace(NetworkConfig{});
  o.require(rows.size() == 17 && expected.size() == 17,
            "row count " + std::to_string(rows.size()) + " vs fixture " + std::to_string(expected.size()));
  for (std::size_t i = 0; i < std::min(rows.size(), expected.size()); ++i)
    o.require(format_trace_row(rows[i]) == expected[i], "row " + std::to_string(i + 1) + " differs");
  if (o.ok) o.detail = "17/17 rows";
  return o;
}

Outcome gradient_suite() {
  Outcome o;
  double worst_block = 0, net = 0;
  for (const auto& r : run_grad_suite(0)) {
    o.require(r.passed(), r.name + " max_rel_err " + fmt("%.3e", r.result.max_rel_error));
    if (r.name == "network_end_to_end")
      net = r.result.max_rel_error;
    else
      worst_block = std::max(worst_block, r.result.max_rel_error);
  }
  if (o.ok) o.detail = "worst block " + fmt("%.2e", worst_block) + ", end-to-end " + fmt("%.2e", net);
  return o;
}

Outcome attention_properties() {
  Outcome o;
  Rng rng(42);
  const double rt = checks::partition_roundtrip_error(rng);
  o.require(rt == 0.0, "(a) roundtrip error " + fmt("%.3e", rt));
  const double rows = checks::attention_row_sum_error(rng);
  o.require(rows <= 1e-6, "(b) row sum error " + fmt("%.3e", rows));
  const auto leak = checks::cross_window_leak(rng);
  o.require(leak.outside == 0.0 && leak.inside > 0.0, "(c) cross-window change " + fmt("%.3e", leak.outside));
  const double masked = checks::max_masked_weight(rng);
  o.require(masked < 1e-6, "(d) masked weight " + fmt("%.3e", masked));
  const double perm = checks::channel_permutation_error(rng);
  o.require(perm <= 1e-6, "(e) permutation error " + fmt("%.3e", perm));
  if (o.ok)
    o.detail = "row err " + fmt("%.1e", rows) + ", masked " + fmt("%.1e", masked) + ", perm " + fmt("%.1e", perm);
  return o;
}

Outcome metric_oracle() {
  Outcome o;
  Rng rng(7);
  std::size_t pairs = 0, compared = 0;
  double worst = 0, worst_ratio = 0;
  while (pairs < 1200) {
    const std::array<std::size_t, 3> ext{1 + rng.below(12), 1 + rng.below(12), 1 + rng.below(12)};
    const double p_dens = rng.uniform(0.0, 0.7), g_dens = rng.uniform(0.0, 0.7);
    const auto P = oracle::random_mask(rng, ext, p_dens), G = oracle::random_mask(rng, ext, g_dens);
    ++pairs;
    std::size_t np = 0, ng = 0, both = 0;
    for (std::size_t i = 0; i < P.data.size(); ++i) {
      np += P.data[i] != 0;
      ng += G.data[i] != 0;
      both += P.data[i] && G.data[i];
    }
    const double d = dss(P, G), j = jss(P, G);
    const double d_ref = np + ng ? 2.0 * both / static_cast<double>(np + ng) : 1.0;
    const double j_ref = np + ng - both ? both / static_cast<double>(np + ng - both) : 1.0;
    if (d != d_ref || j != j_ref) {
      o.require(false, "dss/jss differ from counts on pair " + std::to_string(pairs));
      break;
    }
    worst_ratio = std::max(worst_ratio, std::abs(j - d / (2.0 - d)));
    double h = 0, a = 0;
    const bool defined = oracle::hd95(P, G, h);
    const auto h2 = hd95(P, G), a2 = assd(P, G);
    if (defined != h2.has_value() || defined != a2.has_value()) {
      o.require(false, "definedness differs on pair " + std::to_string(pairs));
      break;
    }
    if (!defined) continue;
    oracle::assd(P, G, a);
    ++compared;
    worst = std::max({worst, std::abs(*h2 - h), std::abs(*a2 - a)});
  }
  o.require(worst <= 1e-9, "distance error " + fmt("%.3e", worst));
  o.require(worst_ratio <= 1e-12, "jss vs dss/(2-dss) " + fmt("%.3e", worst_ratio));
  o.require(compared >= 1000, "only " + std::to_string(compared) + " pairs with both surfaces");
  if (o.ok)
    o.detail = std::to_string(pairs) + " pairs (" + std::to_string(compared) + " with distances), max err " +
               fmt("%.1e", worst);
  return o;
}

Outcome overfit() {
  Outcome o;
  RunConfig c;
  apply_config(c, parse_key_values(R"(
    network.input_extent = 32
    network.base_channels = 8
    network.window_size = 2
    wsc.composition = WSC
    train.batch_size = 2
    train.lr = 0.001
    train.beta1 = 0.9
    train.beta2 = 0.999
    train.eps = 1e-8
    train.weight_decay = 0.01
    train.epochs = 500
    train.max_steps = 500
    train.val_every = 10
    train.target_dss = 0.8
    data.count = 2
    data.mirror = false
  )"));
  Rng rng(c.data_seed);
  const auto data = make_dataset(c.data, rng);
  const auto r = train<float>(c, data, {0, 1}, {}, TrainIO{"", nullptr, nullptr});
  const double best = r.best_dss.value_or(0.0);
  o.require(r.steps <= 500, "ran " + std::to_string(r.steps) + " steps");
  o.require(best >= 0.8, "best training DSS " + fmt("%.4f", best));
  o.detail = (o.ok ? "" : o.detail + "; ") + "DSS " + fmt("%.4f", best) + " after " + std::to_string(r.steps) +
             " steps";
  return o;
}

// One forward, backward and optimizer step; returns the loss.
double one_step(const RunConfig& c, const std::vector<Sample>& data) {
  c.validate();
  Rng rng(c.train.seed);
  Model<float> m(c.network, rng);
  AdamW<float> opt(m.params(), c.train.optim);
  std::vector<const Volume*> vols;
  std::vector<const LabelMap*> labels;
  for (std::size_t i = 0; i < c.train.batch_size; ++i) {
    vols.push_back(&data[i].volume);
    labels.push_back(&data[i].labels);
  }
  auto loss = soft_dice_loss(m.forward(stack_volumes<float>(vols)), one_hot<float>(labels, c.network.num_classes));
  loss.backward();
  for (const auto& [name, t] : m.params().items())
    for (float g : t.grad())
      if (!std::isfinite(g)) return std::nan("");
  opt.step(m.params());
  return loss.item();
}

Outcome ablation_surface() {
  Outcome o;
  RunConfig base;
  apply_config(base, parse_key_values(R"(
    network.input_extent = 24
    network.num_levels = 2
    network.base_channels = 4
    network.norm_groups = 2
    wsc.heads = 2
    train.batch_size = 2
    data.count = 6
    data.mirror = false
  )"));
  Rng rng(base.data_seed);
  const auto data = make_dataset(base.data, rng);
  std::vector<std::vector<std::string>> variants;
  for (const char* comp : {"WS", "WC", "SC", "WSC"}) variants.push_back({std::string("wsc.composition=") + comp});
  for (const char* b : {"2", "4", "6"}) variants.push_back({std::string("train.batch_size=") + b});
  for (const char* d : {"1,1,1,1", "1,1,2,1", "1,1,3,1"}) variants.push_back({std::string("wsc.depths=") + d});
  for (const char* w : {"2", "3", "4"}) variants.push_back({std::string("network.window_size=") + w});
  for (const auto& v : variants) {
    auto c = base;
    for (const auto& kv : v) apply_override(c, kv);
    try {
      const double loss = one_step(c, data);
      o.require(std::isfinite(loss), v[0] + " loss not finite");
    } catch (const std::exception& e) {
      o.require(false, v[0] + ": " + e.what());
    }
  }
  if (o.ok) o.detail = std::to_string(variants.size()) + " configurations";
  return o;
}

Outcome determinism_and_persistence() {
  Outcome o;
  RunConfig c;
  apply_config(c, parse_key_values(R"(
    network.input_extent = 16
    network.base_channels = 4
    network.norm_groups = 2
    network.num_levels = 2
    wsc.heads = 2
    wsc.depths = 1
    train.batch_size = 2
    train.epochs = 2
    train.augment = inplace
    data.count = 3
    data.mirror = false
  )"));
  Rng rng(c.data_seed);
  const auto data = make_dataset(c.data, rng);
  const auto dir = scratch("persist");
  std::ostringstream log1, log2;
  const auto r1 = train<float>(c, data, {0, 1, 2}, {}, TrainIO{(dir / "a").string(), &log1, nullptr});
  const auto r2 = train<float>(c, data, {0, 1, 2}, {}, TrainIO{(dir / "b").string(), &log2, nullptr});
  o.require(!log1.str().empty() && log1.str() == log2.str(), "training logs differ");
  o.require(r1.step_losses == r2.step_losses, "step losses differ");
  o.require(file_bytes(dir / "a" / "final.ckpt") == file_bytes(dir / "b" / "final.ckpt"), "checkpoints differ");

  // checkpoint: bytes survive decode/encode, reloaded model is bit-identical
  const auto ck = read_checkpoint((dir / "a" / "final.ckpt").string());
  const auto raw = file_bytes(dir / "a" / "final.ckpt");
  o.require(encode_checkpoint(ck) == std::vector<unsigned char>(raw.begin(), raw.end()), "checkpoint re-encoding differs");
  const auto m = load_model<float>(ck);
  const auto p1 = (dir / "p1.ckpt").string();
  save_checkpoint(p1, m, ck.config);
  const auto ck2 = read_checkpoint(p1);
  bool same = !ck2.records.empty();
  for (const auto& rec : ck2.records) {
    const auto it = std::find_if(ck.records.begin(), ck.records.end(), [&](const auto& r) { return r.name == rec.name; });
    same &= it != ck.records.end() && it->shape == rec.shape && it->data == rec.data;
  }
  o.require(same, "reloaded parameters differ");

  // volume files
  const auto& s = data[0];
  write_volume((dir / "v.vol").string(), s.volume);
  write_volume((dir / "l.vol").string(), s.labels);
  const auto v2 = read_intensity((dir / "v.vol").string());
  const auto l2 = read_labels((dir / "l.vol").string());
  o.require(encode_volume(v2) == encode_volume(s.volume) && v2.data == s.volume.data, "intensity roundtrip differs");
  o.require(l2 == s.labels, "label roundtrip differs");

  // 4-fold split of a mirrored dataset
  DatasetOptions dopt;
  dopt.count = 8;
  dopt.mirror = true;
  dopt.phantom.extent = 16;
  Rng drng(5);
  const auto ds = make_dataset(dopt, drng);
  const auto groups = group_ids(ds);
  Rng frng(9);
  const auto folds = kfold_split(groups, 4, frng);
  o.require(folds.size() == 4, "expected 4 folds");
  std::multiset<std::size_t> held;
  for (const auto& f : folds) {
    held.insert(f.val.begin(), f.val.end());
    o.require(f.train.size() + f.val.size() == ds.size(), "fold does not cover the dataset");
    std::set<std::size_t> val_groups;
    for (auto i : f.val) val_groups.insert(groups[i]);
    for (auto i : f.train) o.require(!val_groups.count(groups[i]), "mirrored pair split across train/val");
  }
  std::multiset<std::size_t> all;
  for (std::size_t i = 0; i < ds.size(); ++i) all.insert(i);
  o.require(held == all, "validation sets are not a partition");
  if (o.ok) o.detail = std::to_string(r1.steps) + "-step logs identical, roundtrips exact, 4 folds over 8 pairs";
  return o;
}

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "shape-trace conformance", 1, shape_trace_conformance},
      {2, "gradient suite", 300, gradient_suite},
      {3, "attention properties", 60, attention_properties},
      {4, "metric oracle equivalence", 120, metric_oracle},
      {5, "overfit sanity", 900, overfit},
      {6, "ablation surface", 300, ablation_surface},
      {7, "determinism and persistence", 120, determinism_and_persistence},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.ok = false;
      out.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) out.require(false, "over runtime budget of " + fmt("%.0f s", c.budget_s));
    failures += !out.ok;
    std::printf("%s criterion %d %s: %s [%.2f s]\n", out.ok ? "PASS" : "FAIL", c.id, c.name.c_str(),
                out.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}

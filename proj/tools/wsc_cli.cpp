// wsc: phantom generation, training, evaluation and inspection commands.
//
// Exit codes: 0 ok, 2 usage or configuration error, 3 data error,
// 4 numeric failure (non-finite loss, gradient check over tolerance).

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "wsc/checkpoint.hpp"
#include "wsc/config.hpp"
#include "wsc/dataset.hpp"
#include "wsc/grad_suite.hpp"
#include "wsc/metrics.hpp"
#include "wsc/network.hpp"
#include "wsc/trainer.hpp"

namespace {

using namespace wsc;

constexpr int kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumeric = 4;

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "key=value configuration file");
  cmd->add_option("--set", o.overrides, "override one key, e.g. --set train.batch_size=2")->take_all();
  cmd->add_option("--seed", o.seed, "seed for data generation and training");
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig c;
  if (!o.config.empty()) apply_config(c, read_key_values(o.config));
  for (const auto& kv : o.overrides) apply_override(c, kv);
  if (o.seed) {
    c.train.seed = *o.seed;
    c.data_seed = *o.seed;
  }
  c.validate();
  return c;
}

void print_report(const MetricsReport& r, bool json) {
  if (json)
    std::cout << r.to_json().dump(2) << '\n';
  else
    std::cout << r.to_text();
}

void open_log(std::ofstream& log, const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  log.open(path);
  if (!log) throw DataError("cannot write log " + path);
}

template <class T>
int run_train(const RunConfig& cfg, const std::string& data_dir, const std::string& val_dir, const std::string& out,
              const std::string& log_path) {
  auto samples = load_dataset(data_dir);
  std::vector<std::size_t> train_idx(samples.size()), val_idx;
  for (std::size_t i = 0; i < samples.size(); ++i) train_idx[i] = i;
  if (!val_dir.empty()) {
    auto val = load_dataset(val_dir);
    for (auto& s : val) {
      val_idx.push_back(samples.size());
      samples.push_back(std::move(s));
    }
  }
  std::ofstream log;
  TrainIO io{out, nullptr, &std::cerr};
  if (!log_path.empty()) {
    open_log(log, log_path);
    io.log = &log;
  }
  const auto r = train<T>(cfg, samples, train_idx, val_idx, io);
  nlohmann::json j{{"steps", r.steps},        {"best_epoch", r.best_epoch},
                   {"best_dss", r.best_dss ? nlohmann::json(*r.best_dss) : nlohmann::json(nullptr)},
                   {"final_checkpoint", r.final_checkpoint}, {"best_checkpoint", r.best_checkpoint}};
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

template <class T>
int run_cross_validate(const RunConfig& cfg, const std::string& data_dir, const std::string& out,
                       const std::string& log_path, bool json) {
  const auto samples = load_dataset(data_dir);
  std::ofstream log;
  TrainIO io{out, nullptr, &std::cerr};
  if (!log_path.empty()) {
    open_log(log, log_path);
    io.log = &log;
  }
  const auto cv = cross_validate<T>(cfg, samples, io);
  if (json) {
    nlohmann::json j{{"aggregate", cv.aggregate.to_json()}, {"folds", nlohmann::json::array()}};
    for (const auto& f : cv.folds) {
      nlohmann::json cases = nlohmann::json::object();
      for (const auto& c : f.cases) cases[c.name] = c.report.to_json();
      j["folds"].push_back({{"fold", f.fold}, {"report", f.report.to_json()}, {"cases", cases},
                            {"best_checkpoint", f.best_checkpoint}});
    }
    std::cout << j.dump(2) << '\n';
  } else {
    for (const auto& f : cv.folds) {
      std::cout << "fold " << f.fold << " (" << f.val.size() << " held-out cases)\n";
      for (const auto& c : f.cases) std::cout << "  case " << c.name << '\n' << c.report.to_text();
      std::cout << f.report.to_text();
    }
    std::cout << "aggregate over folds\n" << cv.aggregate.to_text();
  }
  return kExitOk;
}

template <class T>
int run_eval(const CheckpointData& ck, const std::string& data_dir, bool json) {
  const auto model = load_model<T>(ck);
  const auto samples = load_dataset(data_dir);
  check_samples(model.config(), samples);
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto cases = evaluate_model(model, samples, idx);
  const auto agg = aggregate_cases(cases);
  if (json) {
    nlohmann::json j{{"aggregate", agg.to_json()}, {"cases", nlohmann::json::object()}};
    for (const auto& c : cases) j["cases"][c.name] = c.report.to_json();
    std::cout << j.dump(2) << '\n';
  } else {
    for (const auto& c : cases) std::cout << "case " << c.name << '\n' << c.report.to_text();
    std::cout << "mean over cases\n" << agg.to_text();
  }
  return kExitOk;
}

template <class T>
int run_predict(const CheckpointData& ck, const std::string& input, const std::string& output) {
  const auto model = load_model<T>(ck);
  const auto vol = read_intensity(input);
  const auto E = model.config().input_extent;
  if (vol.extents != std::array<std::size_t, 3>{E, E, E})
    throw DataError(input + ": extent " + std::to_string(vol.extents[0]) + "x" + std::to_string(vol.extents[1]) + "x" +
                    std::to_string(vol.extents[2]) + " does not match the checkpoint's input_extent " +
                    std::to_string(E));
  write_volume(output, predict_labels(model, vol));
  return kExitOk;
}

bool is_double(const NetworkConfig& n) { return n.precision == Precision::Float64; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D segmentation with window, shifted-window and channel attention"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory")->required();
  add_common(gen, common);

  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_data, tr_val, tr_out, tr_log;
  tr->add_option("--data", tr_data, "training dataset directory")->required();
  tr->add_option("--val-data", tr_val, "validation dataset directory (default: validate on training data)");
  tr->add_option("--out", tr_out, "directory for best.ckpt and final.ckpt")->required();
  tr->add_option("--log", tr_log, "JSON-lines training log");
  add_common(tr, common);

  auto* cv = app.add_subcommand("cross-validate", "k-fold cross-validation");
  std::string cv_data, cv_out, cv_log;
  bool cv_json = false;
  cv->add_option("--data", cv_data, "dataset directory")->required();
  cv->add_option("--out", cv_out, "directory for per-fold checkpoints");
  cv->add_option("--log", cv_log, "JSON-lines training log");
  cv->add_flag("--json", cv_json, "JSON output");
  add_common(cv, common);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data;
  bool ev_json = false;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_flag("--json", ev_json, "JSON output");
  ev->add_option("--seed", common.seed, "accepted for uniformity; evaluation is deterministic");

  auto* pr = app.add_subcommand("predict", "segment one volume");
  std::string pr_ckpt, pr_in, pr_out;
  pr->add_option("--checkpoint", pr_ckpt, "checkpoint file")->required();
  pr->add_option("--input", pr_in, "float32 volume file")->required();
  pr->add_option("--output", pr_out, "uint8 label file to write")->required();
  pr->add_option("--seed", common.seed, "accepted for uniformity; prediction is deterministic");

  auto* me = app.add_subcommand("metrics", "compare a predicted label file with ground truth");
  std::string me_pred, me_gt;
  std::size_t me_classes = 6;
  bool me_json = false;
  me->add_option("pred", me_pred, "predicted label file")->required();
  me->add_option("gt", me_gt, "ground-truth label file")->required();
  me->add_option("--classes", me_classes, "number of classes including background");
  me->add_flag("--json", me_json, "JSON output");
  me->add_option("--seed", common.seed, "accepted for uniformity; metrics are deterministic");

  auto* st = app.add_subcommand("shape-trace", "print the per-layer shape table");
  add_common(st, common);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable block");
  std::uint64_t gc_seed = 0;
  gc->add_option("--seed", gc_seed, "seed for the random test inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) {
      const auto cfg = resolve(common);
      DatasetOptions opt = cfg.data;
      if (cfg.data_augment == AugmentMode::None) {
        opt.mirror = false;
        opt.shifts = 0;
      }
      Rng rng(cfg.data_seed);
      const auto samples = make_dataset(opt, rng);
      save_dataset(gen_out, samples);
      std::cout << "wrote " << samples.size() << " cases to " << gen_out << '\n';
    } else if (*tr) {
      const auto cfg = resolve(common);
      return is_double(cfg.network) ? run_train<double>(cfg, tr_data, tr_val, tr_out, tr_log)
                                    : run_train<float>(cfg, tr_data, tr_val, tr_out, tr_log);
    } else if (*cv) {
      const auto cfg = resolve(common);
      return is_double(cfg.network) ? run_cross_validate<double>(cfg, cv_data, cv_out, cv_log, cv_json)
                                    : run_cross_validate<float>(cfg, cv_data, cv_out, cv_log, cv_json);
    } else if (*ev) {
      const auto ck = read_checkpoint(ev_ckpt);
      return is_double(network_from_key_values(ck.config)) ? run_eval<double>(ck, ev_data, ev_json)
                                                           : run_eval<float>(ck, ev_data, ev_json);
    } else if (*pr) {
      const auto ck = read_checkpoint(pr_ckpt);
      return is_double(network_from_key_values(ck.config)) ? run_predict<double>(ck, pr_in, pr_out)
                                                           : run_predict<float>(ck, pr_in, pr_out);
    } else if (*me) {
      const auto pred = read_labels(me_pred), gt = read_labels(me_gt);
      if (pred.extents != gt.extents) throw DataError("prediction and ground truth differ in extent");
      print_report(evaluate(pred, gt, me_classes), me_json);
    } else if (*st) {
      const auto cfg = resolve(common);
      for (const auto& row : shape_trace(cfg.network)) std::cout << format_trace_row(row) << '\n';
    } else if (*gc) {
      bool ok = true;
      for (const auto& r : run_grad_suite(gc_seed)) {
        std::printf("%-20s max_rel_err=%.3e tol=%.0e checked=%zu kinks=%zu %s\n", r.name.c_str(),
                    r.result.max_rel_error, r.tolerance, r.result.checked, r.result.skipped_kinks,
                    r.passed() ? "ok" : "FAIL");
        ok &= r.passed();
      }
      return ok ? kExitOk : kExitNumeric;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    // data, format and I/O problems
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

#pragma once

// Training loop, evaluation, k-fold cross-validation and prediction.
//
// A run is a pure function of its configuration and data: the seed fixes
// initialization, batch order and augmentation draws, each from its own
// stream, so the loss trajectory is reproducible bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsc/checkpoint.hpp"
#include "wsc/config.hpp"
#include "wsc/dataset.hpp"
#include "wsc/loss.hpp"
#include "wsc/metrics.hpp"
#include "wsc/network.hpp"
#include "wsc/optim.hpp"

namespace wsc {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// independent streams per purpose
enum class Stream : std::uint64_t { Init = 1, Order = 2, Augment = 3 };

inline Rng stream_rng(std::uint64_t seed, Stream s) {
  return Rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(s) * 0xBF58476D1CE4E5B9ULL);
}

}  // namespace detail

inline void check_samples(const NetworkConfig& cfg, const std::vector<Sample>& samples) {
  for (const auto& s : samples) {
    const auto E = cfg.input_extent;
    if (s.volume.extents != std::array<std::size_t, 3>{E, E, E})
      throw DataError(s.name + ": extent " + std::to_string(s.volume.extents[0]) + "x" +
                      std::to_string(s.volume.extents[1]) + "x" + std::to_string(s.volume.extents[2]) +
                      " does not match network.input_extent=" + std::to_string(E));
    for (auto v : s.labels.data)
      if (v >= cfg.num_classes)
        throw DataError(s.name + ": label " + std::to_string(v) + " outside network.num_classes=" +
                        std::to_string(cfg.num_classes));
  }
}

/// Stacks volumes into [N, 1, D, H, W].
template <class T>
Tensor<T> stack_volumes(const std::vector<const Volume*>& vols) {
  const auto ext = vols.front()->extents;
  std::vector<T> data;
  data.reserve(vols.size() * vols.front()->size());
  for (const auto* v : vols) {
    if (v->extents != ext) throw ShapeError("volumes in a batch differ in extent");
    data.insert(data.end(), v->data.begin(), v->data.end());
  }
  return Tensor<T>::from_data({vols.size(), 1, ext[0], ext[1], ext[2]}, std::move(data));
}

/// Per-voxel argmax of the class probabilities.
template <class T>
LabelMap predict_labels(const Model<T>& model, const Volume& v) {
  NoGradGuard ng;
  const auto probs = model.forward(stack_volumes<T>({&v}));
  const std::size_t C = probs.dim(1), V = v.size();
  LabelMap out(v.extents);
  out.spacing = v.spacing;
  const auto p = probs.data();
  for (std::size_t i = 0; i < V; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (p[c * V + i] > p[best * V + i]) best = c;
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

struct CaseReport {
  std::string name;
  MetricsReport report;
};

template <class T>
std::vector<CaseReport> evaluate_model(const Model<T>& model, const std::vector<Sample>& samples,
                                       const std::vector<std::size_t>& indices) {
  std::vector<CaseReport> out;
  for (auto i : indices) {
    const auto pred = predict_labels(model, samples[i].volume);
    out.push_back({samples[i].name, evaluate(pred, samples[i].labels, model.config().num_classes)});
  }
  return out;
}

inline MetricsReport aggregate_cases(const std::vector<CaseReport>& cases) {
  std::vector<MetricsReport> r;
  for (const auto& c : cases) r.push_back(c.report);
  return aggregate(r);
}

struct EpochRecord {
  std::size_t epoch = 0, step = 0;
  double mean_loss = 0.0;
  std::optional<double> val_dss;
};

template <class T>
struct TrainResult {
  std::vector<double> step_losses;
  std::vector<EpochRecord> epochs;
  std::size_t steps = 0;
  std::optional<double> best_dss;
  std::size_t best_epoch = 0;
  bool reached_target = false;
  std::vector<std::vector<T>> best_params;  // parameter values at best validation
  std::string final_checkpoint, best_checkpoint;
};

struct TrainIO {
  std::string out_dir;             // checkpoints go here when non-empty
  std::ostream* log = nullptr;     // JSON lines
  std::ostream* progress = nullptr;  // human-readable epoch summaries
};

namespace detail {

template <class T>
std::vector<std::vector<T>> snapshot(const ParamStore<T>& ps) {
  std::vector<std::vector<T>> out;
  for (const auto& [_, t] : ps.items()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

template <class T>
void restore(ParamStore<T>& ps, const std::vector<std::vector<T>>& values) {
  auto& items = ps.items();
  for (std::size_t k = 0; k < items.size(); ++k) std::copy(values[k].begin(), values[k].end(), items[k].second.mutable_data().begin());
}

}  // namespace detail

/// Trains a fresh model on samples[train_idx], validating on samples[val_idx]
/// (or on the training cases when val_idx is empty).
template <class T>
TrainResult<T> train(const RunConfig& cfg, const std::vector<Sample>& samples, const std::vector<std::size_t>& train_idx,
                     const std::vector<std::size_t>& val_idx, const TrainIO& io, Model<T>* trained = nullptr) {
  cfg.validate();
  if (train_idx.empty()) throw DataError("no training cases");
  check_samples(cfg.network, samples);
  const auto& opt = cfg.train;
  Rng init_rng = detail::stream_rng(opt.seed, detail::Stream::Init);
  Rng order_rng = detail::stream_rng(opt.seed, detail::Stream::Order);
  Rng aug_rng = detail::stream_rng(opt.seed, detail::Stream::Augment);
  Model<T> model(cfg.network, init_rng);
  AdamW<T> optim(model.params(), opt.optim);
  const auto config_kv = to_key_values(cfg);
  const auto& eval_idx = val_idx.empty() ? train_idx : val_idx;
  const std::size_t C = cfg.network.num_classes;

  std::filesystem::path dir;
  if (!io.out_dir.empty()) {
    dir = io.out_dir;
    std::filesystem::create_directories(dir);
  }

  TrainResult<T> res;
  auto log = [&](const nlohmann::json& j) {
    if (io.log) *io.log << j.dump() << '\n';
  };

  std::vector<std::size_t> order = train_idx;
  const std::size_t B = opt.batch_size;
  const std::size_t steps_per_epoch = (order.size() + B - 1) / B;
  bool stop = false;
  for (std::size_t epoch = 1; epoch <= opt.epochs && !stop; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t first = s * B, last = std::min(order.size(), first + B);
      std::vector<Sample> augmented;
      std::vector<const Volume*> vols;
      std::vector<const LabelMap*> labs;
      if (opt.augment == AugmentMode::InPlace) {
        for (std::size_t i = first; i < last; ++i) {
          const auto& src = samples[order[i]];
          const bool flip = aug_rng.uniform() < 0.5;
          auto base = flip ? mirror_lr(src.volume, src.labels) : std::make_pair(src.volume, src.labels);
          auto r = random_axis_shift(base.first, base.second, aug_rng);
          augmented.push_back({src.name, src.group, std::move(r.volume), std::move(r.labels)});
        }
        for (const auto& a : augmented) {
          vols.push_back(&a.volume);
          labs.push_back(&a.labels);
        }
      } else {
        for (std::size_t i = first; i < last; ++i) {
          vols.push_back(&samples[order[i]].volume);
          labs.push_back(&samples[order[i]].labels);
        }
      }
      const auto x = stack_volumes<T>(vols);
      const auto target = one_hot<T>(labs, C);
      const auto loss = soft_dice_loss(model.forward(x), target);
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw NumericError("non-finite loss " + std::to_string(lv) + " at step " + std::to_string(res.steps + 1));
      loss.backward();
      optim.step(model.params());
      model.params().zero_grad();
      ++res.steps;
      ++epoch_steps;
      loss_sum += lv;
      res.step_losses.push_back(lv);
      log({{"step", res.steps}, {"epoch", epoch}, {"loss", lv}});
      if (opt.max_steps && res.steps >= opt.max_steps) {
        stop = true;
        break;
      }
    }

    EpochRecord rec{epoch, res.steps, loss_sum / double(epoch_steps), std::nullopt};
    const bool last_epoch = stop || epoch == opt.epochs;
    if (epoch % opt.val_every == 0 || last_epoch) {
      const auto cases = evaluate_model(model, samples, eval_idx);
      const auto agg = aggregate_cases(cases);
      rec.val_dss = agg.mean_dss;
      nlohmann::json j{{"step", res.steps}, {"epoch", epoch}, {"loss", rec.mean_loss}, {"epoch_end", true},
                       {"eval_set", val_idx.empty() ? "train" : "val"}, {"val_mean_dss", *agg.mean_dss},
                       {"val", agg.to_json()}};
      log(j);
      if (!res.best_dss || *agg.mean_dss > *res.best_dss) {
        res.best_dss = agg.mean_dss;
        res.best_epoch = epoch;
        res.best_params = detail::snapshot(model.params());
        if (!dir.empty()) {
          res.best_checkpoint = (dir / "best.ckpt").string();
          save_checkpoint(res.best_checkpoint, model, config_kv, &optim);
        }
      }
      if (opt.target_dss > 0.0 && *agg.mean_dss >= opt.target_dss) {
        res.reached_target = true;
        stop = true;
      }
    } else {
      log({{"step", res.steps}, {"epoch", epoch}, {"loss", rec.mean_loss}, {"epoch_end", true}});
    }
    if (io.progress) {
      *io.progress << "epoch " << epoch << " step " << res.steps << " loss " << rec.mean_loss;
      if (rec.val_dss) *io.progress << " dss " << *rec.val_dss;
      *io.progress << std::endl;
    }
    res.epochs.push_back(rec);
  }
  if (!dir.empty()) {
    res.final_checkpoint = (dir / "final.ckpt").string();
    save_checkpoint(res.final_checkpoint, model, config_kv, &optim);
  }
  if (trained) *trained = std::move(model);
  return res;
}

struct FoldOutcome {
  std::size_t fold = 0;
  std::vector<std::size_t> train, val;
  std::vector<CaseReport> cases;
  MetricsReport report;  // mean over the fold's held-out cases
  std::string best_checkpoint;
};

struct CrossValidationResult {
  std::vector<FoldOutcome> folds;
  MetricsReport aggregate;  // mean over folds
};

/// One model per fold, selected at its best held-out DSS and scored on that fold.
template <class T>
CrossValidationResult cross_validate(const RunConfig& cfg, const std::vector<Sample>& samples, const TrainIO& io) {
  Rng split_rng = detail::stream_rng(cfg.train.seed, detail::Stream::Order);
  const auto folds = kfold_split(group_ids(samples), cfg.train.folds, split_rng);
  CrossValidationResult out;
  std::vector<MetricsReport> fold_reports;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    TrainIO fio = io;
    if (!io.out_dir.empty()) fio.out_dir = (std::filesystem::path(io.out_dir) / ("fold" + std::to_string(f + 1))).string();
    if (io.progress) *io.progress << "fold " << f + 1 << "/" << folds.size() << std::endl;
    const auto res = train<T>(cfg, samples, folds[f].train, folds[f].val, fio);
    Rng unused(0);
    Model<T> model(cfg.network, unused);
    detail::restore(model.params(), res.best_params);
    FoldOutcome fo{f + 1, folds[f].train, folds[f].val, evaluate_model(model, samples, folds[f].val), {}, res.best_checkpoint};
    fo.report = aggregate_cases(fo.cases);
    fold_reports.push_back(fo.report);
    out.folds.push_back(std::move(fo));
  }
  out.aggregate = aggregate(fold_reports);
  return out;
}

}  // namespace wsc

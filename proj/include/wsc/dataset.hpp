#pragma once

// In-memory datasets of (volume, labels) cases, their on-disk directory
// layout, and grouped k-fold splitting.
//
// Every case carries a group id naming the phantom it was derived from, so
// mirrored or shifted copies of one phantom always land in the same fold.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsc/phantom.hpp"
#include "wsc/volume.hpp"

namespace wsc {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Sample {
  std::string name;
  std::size_t group = 0;
  Volume volume;
  LabelMap labels;
};

struct DatasetOptions {
  std::size_t count = 8;       // base phantoms
  bool mirror = true;          // add a mirrored copy of every phantom
  std::size_t shifts = 0;      // shifted copies per (possibly mirrored) case
  PhantomSpec phantom{};
};

/// Generates `count` phantoms and, in expansion mode, their augmented copies.
/// Case order: for each phantom, original, [mirror], then shifted copies.
inline std::vector<Sample> make_dataset(const DatasetOptions& opt, Rng& rng) {
  std::vector<Sample> out;
  for (std::size_t g = 0; g < opt.count; ++g) {
    auto [v, l] = phantom_generate(opt.phantom, rng);
    const std::string base = "case" + std::to_string(g);
    std::vector<Sample> local;
    local.push_back({base, g, std::move(v), std::move(l)});
    if (opt.mirror) {
      auto [mv, ml] = mirror_lr(local[0].volume, local[0].labels);
      local.push_back({base + "m", g, std::move(mv), std::move(ml)});
    }
    const std::size_t originals = local.size();
    for (std::size_t o = 0; o < originals; ++o)
      for (std::size_t s = 0; s < opt.shifts; ++s) {
        auto r = random_axis_shift(local[o].volume, local[o].labels, rng);
        local.push_back({local[o].name + "s" + std::to_string(s), g, std::move(r.volume), std::move(r.labels)});
      }
    for (auto& s : local) out.push_back(std::move(s));
  }
  return out;
}

// ------------------------------------------------------------ directory layout
//
//   <dir>/manifest.txt       one "name group image label" line per case
//   <dir>/<name>_image.vol   float32 volume
//   <dir>/<name>_label.vol   uint8 labels

inline void save_dataset(const std::string& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(std::filesystem::path(dir) / "manifest.txt");
  if (!manifest) throw DataError("cannot write manifest in " + dir);
  for (const auto& s : samples) {
    const std::string img = s.name + "_image.vol", lab = s.name + "_label.vol";
    write_volume((std::filesystem::path(dir) / img).string(), s.volume);
    write_volume((std::filesystem::path(dir) / lab).string(), s.labels);
    manifest << s.name << ' ' << s.group << ' ' << img << ' ' << lab << '\n';
  }
}

inline std::vector<Sample> load_dataset(const std::string& dir) {
  const auto mpath = std::filesystem::path(dir) / "manifest.txt";
  std::ifstream in(mpath);
  if (!in) throw DataError("no manifest.txt in " + dir);
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Sample s;
    std::string img, lab;
    if (!(ls >> s.name >> s.group >> img >> lab))
      throw DataError(mpath.string() + ":" + std::to_string(lineno) + ": expected 'name group image label'");
    try {
      s.volume = read_intensity((std::filesystem::path(dir) / img).string());
      s.labels = read_labels((std::filesystem::path(dir) / lab).string());
    } catch (const std::exception& e) {
      throw DataError(e.what());
    }
    if (s.volume.extents != s.labels.extents) throw DataError(s.name + ": image and label extents differ");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError(mpath.string() + " lists no cases");
  return out;
}

// ----------------------------------------------------------------------- folds

struct Fold {
  std::vector<std::size_t> train, val;
};

/// k folds over items with group ids; items sharing a group share a fold.
/// Groups are shuffled with `rng` and dealt round-robin.
inline std::vector<Fold> kfold_split(const std::vector<std::size_t>& groups, std::size_t k, Rng& rng) {
  if (k < 2) throw std::invalid_argument("k-fold split needs k >= 2");
  if (groups.size() < k)
    throw std::invalid_argument("cannot split " + std::to_string(groups.size()) + " items into " + std::to_string(k) +
                                " folds");
  std::vector<std::size_t> ids = groups;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < k)
    throw std::invalid_argument("only " + std::to_string(ids.size()) + " independent groups for " + std::to_string(k) +
                                " folds");
  rng.shuffle(ids.begin(), ids.end());
  std::map<std::size_t, std::size_t> fold_of;
  for (std::size_t i = 0; i < ids.size(); ++i) fold_of[ids[i]] = i % k;
  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto f = fold_of[groups[i]];
    for (std::size_t j = 0; j < k; ++j) (j == f ? folds[j].val : folds[j].train).push_back(i);
  }
  return folds;
}

/// Ungrouped split: every item is its own group.
inline std::vector<Fold> kfold_split(std::size_t n_items, std::size_t k, Rng& rng) {
  std::vector<std::size_t> g(n_items);
  for (std::size_t i = 0; i < n_items; ++i) g[i] = i;
  return kfold_split(g, k, rng);
}

inline std::vector<std::size_t> group_ids(const std::vector<Sample>& s) {
  std::vector<std::size_t> g;
  for (const auto& x : s) g.push_back(x.group);
  return g;
}

}  // namespace wsc

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "wsc/dataset.hpp"
#include "wsc/metrics.hpp"

using namespace wsc;

TEST(Phantom, DeterministicPerSeed) {
  PhantomSpec spec;
  Rng a(42), b(42), c(43);
  const auto [v1, l1] = phantom_generate(spec, a);
  const auto [v2, l2] = phantom_generate(spec, b);
  const auto [v3, l3] = phantom_generate(spec, c);
  EXPECT_EQ(v1, v2);
  EXPECT_EQ(l1, l2);
  EXPECT_NE(l1, l3);
}

TEST(Phantom, ClassPresenceAndImbalance) {
  PhantomSpec spec;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto [v, l] = phantom_generate(spec, rng);
    const auto n = class_counts(l);
    std::size_t fg = 0;
    for (std::size_t c = 1; c < kPhantomClasses; ++c) {
      EXPECT_GE(n[c], 8u) << "class " << c << " seed " << seed;
      fg += n[c];
    }
    EXPECT_LT(static_cast<double>(fg) / l.size(), 0.05);
    for (float x : v.data) {
      ASSERT_GE(x, 0.0f);
      ASSERT_LE(x, 1.0f);
    }
  }
}

TEST(Phantom, NerveIsThinnest) {
  // a thinner tube leaves fewer voxels off its surface
  Rng rng(1);
  PhantomSpec spec;
  spec.extent = 48;
  const auto [v, l] = phantom_generate(spec, rng);
  const auto nerve = class_mask(l, 2), coch = class_mask(l, 1);
  auto interior = [](const Mask& m) {
    std::size_t n = 0;
    for (auto x : m.data) n += x;
    return n - surface_extract(m).size();
  };
  EXPECT_LT(interior(nerve), interior(coch));
}

TEST(Phantom, SmallExtentRejected) {
  PhantomSpec spec;
  spec.extent = 12;
  Rng rng(0);
  EXPECT_THROW(phantom_generate(spec, rng), std::invalid_argument);
  spec.extent = 16;
  EXPECT_NO_THROW(phantom_generate(spec, rng));
}

TEST(Augment, MirrorIsInvolutionAndMovesMarker) {
  Rng rng(3);
  PhantomSpec spec;
  spec.extent = 16;
  const auto [v, l] = phantom_generate(spec, rng);
  const auto [mv, ml] = mirror_lr(v, l);
  EXPECT_EQ(mirror_lr(mv), v);
  EXPECT_EQ(mirror_lr(ml), l);
  LabelMap marker({4, 5, 6});
  marker.at(1, 2, 0) = 3;
  const auto m = mirror_lr(marker);
  EXPECT_EQ(m.at(1, 2, 5), 3);
  EXPECT_EQ(m.at(1, 2, 0), 0);
}

TEST(Augment, ShiftMagnitudes) {
  Rng rng(9);
  std::set<long> mags;
  for (int i = 0; i < 500; ++i)
    for (auto o : draw_axis_shift({96, 96, 96}, rng)) mags.insert(std::abs(o));
  EXPECT_EQ(mags, (std::set<long>{8, 9, 10}));
}

TEST(Augment, ShiftKeepsAlignment) {
  Rng rng(4);
  Volume v({20, 20, 20});
  LabelMap l({20, 20, 20});
  v.at(10, 11, 12) = 1.0f;
  l.at(10, 11, 12) = 5;
  l.at(0, 0, 0) = 1;  // pushed out or moved, never left behind
  const auto r = random_axis_shift(v, l, rng);
  const long z = 10 + r.offset[0], y = 11 + r.offset[1], x = 12 + r.offset[2];
  EXPECT_EQ(r.volume.at(z, y, x), 1.0f);
  EXPECT_EQ(r.labels.at(z, y, x), 5);
  EXPECT_EQ(dss(class_mask(r.labels, 5), class_mask(translate(l, r.offset), 5)), 1.0);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(r.volume.data[i] != 0.0f, r.labels.data[i] == 5);
  const auto id = random_axis_shift(v, l, rng, true);
  EXPECT_EQ(id.volume, v);
  EXPECT_EQ(id.labels, l);
}

TEST(Dataset, ExpansionCountsAndGroups) {
  DatasetOptions opt;
  opt.count = 3;
  opt.phantom.extent = 16;
  opt.shifts = 2;
  Rng rng(0);
  const auto ds = make_dataset(opt, rng);
  EXPECT_EQ(ds.size(), 3u * 2 * 3);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds[i].group, i / 6);
  EXPECT_EQ(mirror_lr(ds[0].labels), ds[1].labels);
  opt.count = 80;
  opt.shifts = 0;
  opt.phantom.extent = 16;
  Rng r2(0);
  EXPECT_EQ(make_dataset(opt, r2).size(), 160u);
}

TEST(Dataset, DirectoryRoundtrip) {
  DatasetOptions opt;
  opt.count = 2;
  opt.phantom.extent = 16;
  Rng rng(5);
  const auto ds = make_dataset(opt, rng);
  const auto dir = (std::filesystem::temp_directory_path() / "wsc_test_dataset").string();
  std::filesystem::remove_all(dir);
  save_dataset(dir, ds);
  const auto back = load_dataset(dir);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back[i].name, ds[i].name);
    EXPECT_EQ(back[i].group, ds[i].group);
    EXPECT_EQ(back[i].volume, ds[i].volume);
    EXPECT_EQ(back[i].labels, ds[i].labels);
  }
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_dataset(dir), DataError);
}

TEST(Folds, PartitionOfEightItems) {
  Rng rng(1);
  const auto folds = kfold_split(8, 4, rng);
  ASSERT_EQ(folds.size(), 4u);
  std::multiset<std::size_t> seen;
  for (const auto& f : folds) {
    EXPECT_EQ(f.val.size(), 2u);
    EXPECT_EQ(f.train.size(), 6u);
    seen.insert(f.val.begin(), f.val.end());
    for (auto v : f.val) EXPECT_EQ(std::count(f.train.begin(), f.train.end(), v), 0);
  }
  EXPECT_EQ(seen, (std::multiset<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  Rng again(1);
  const auto f2 = kfold_split(8, 4, again);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(folds[i].val, f2[i].val);
  Rng r3(0);
  EXPECT_THROW(kfold_split(3, 4, r3), std::invalid_argument);
}

TEST(Folds, MirroredPairsStayTogether) {
  std::vector<std::size_t> groups;
  for (std::size_t g = 0; g < 8; ++g) groups.insert(groups.end(), {g, g});
  Rng rng(7);
  for (const auto& f : kfold_split(groups, 4, rng)) {
    EXPECT_EQ(f.val.size(), 4u);
    for (auto i : f.val)
      for (auto j : f.train) EXPECT_NE(groups[i], groups[j]);
  }
}

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "wsc/loss.hpp"
#include "wsc/network.hpp"

using namespace wsc;

namespace {

NetworkConfig toy() {
  NetworkConfig c;
  c.input_extent = 16;
  c.base_channels = 8;
  c.num_levels = 3;
  c.norm_groups = 4;
  c.wsc.heads = 2;
  c.wsc.depths = {1};
  return c;
}

}  // namespace

TEST(ShapeTrace, DefaultsMatchFixture) {
  std::ifstream in(WSC_FIXTURE_DIR "/layer_table.txt");
  ASSERT_TRUE(in) << "missing fixture";
  std::vector<std::string> expected;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) expected.push_back(line);
  const auto rows = shape_trace(NetworkConfig{});
  ASSERT_EQ(rows.size(), 17u);
  ASSERT_EQ(expected.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(format_trace_row(rows[i]), expected[i]) << "row " << i;
}

TEST(ShapeTrace, FollowsLevels) {
  const auto rows = shape_trace(toy());
  // ConvBlock, 3 dense, 2 down, WSC, 3 res, 2 up, Softmax
  ASSERT_EQ(rows.size(), 13u);
  EXPECT_EQ(rows[6].layer, "WSC");
  EXPECT_EQ(rows[6].input, (Shape{32, 4, 4, 4}));
  EXPECT_EQ(rows.back().output, (Shape{6, 16, 16, 16}));
}

TEST(Model, ForwardShapesAndProbabilities) {
  Rng rng(1);
  Model<float> m(toy(), rng);
  const auto x = TensorF::randn({2, 1, 16, 16, 16}, rng);
  NoGradGuard ng;
  const auto p = m.forward(x);
  ASSERT_EQ(p.shape(), (Shape{2, 6, 16, 16, 16}));
  const std::size_t V = 16 * 16 * 16;
  double worst = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t v = 0; v < V; ++v) {
      double s = 0;
      for (std::size_t c = 0; c < 6; ++c) {
        const float q = p[(n * 6 + c) * V + v];
        EXPECT_GE(q, 0.f);
        s += q;
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
  EXPECT_LT(worst, 1e-5);
}

TEST(Model, BackwardReachesEveryParameter) {
  Rng rng(2);
  auto cfg = toy();
  Model<double> m(cfg, rng);
  const auto x = TensorD::randn({1, 1, 16, 16, 16}, rng);
  LabelMap l({16, 16, 16});
  for (auto& v : l.data) v = static_cast<std::uint8_t>(rng.below(6));
  soft_dice_loss(m.forward(x), one_hot<double>({&l}, 6)).backward();
  for (const auto& [name, t] : m.params().items()) {
    ASSERT_TRUE(t.has_grad()) << name;
    double mag = 0;
    for (double g : t.grad()) mag += std::abs(g);
    EXPECT_GT(mag, 0.0) << name;
  }
}

TEST(Model, SameSeedSameParameters) {
  Rng a(9), b(9);
  Model<float> m1(toy(), a), m2(toy(), b);
  ASSERT_EQ(m1.params().size(), m2.params().size());
  for (std::size_t i = 0; i < m1.params().size(); ++i)
    EXPECT_EQ(m1.params().items()[i].second.vec(), m2.params().items()[i].second.vec());
}

TEST(Model, RejectsWrongInput) {
  Rng rng(3);
  Model<float> m(toy(), rng);
  EXPECT_THROW(m.forward(TensorF::zeros({1, 1, 8, 8, 8})), ShapeError);
  EXPECT_THROW(m.forward(TensorF::zeros({1, 2, 16, 16, 16})), ShapeError);
}

TEST(NetworkConfig, ValidationNamesTheFailingLevel) {
  auto c = toy();
  c.input_extent = 15;
  try {
    c.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("level 1"), std::string::npos) << e.what();
  }
  c = toy();
  c.wsc.window_size = 3;  // bottleneck extent 4
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy();
  c.wsc.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy();
  c.norm_groups = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(NetworkConfig, ParameterNamesAreStable) {
  Rng rng(4);
  Model<float> m(toy(), rng);
  for (const char* n : {"encoder.conv_block.conv.weight", "encoder.dense3.proj.weight", "encoder.down2.proj.weight",
                        "bottleneck.wsc.stage0.block0.S.attn.qkv.weight", "decoder.res1.conv_out.bias",
                        "decoder.up2.weight", "head.classifier.weight"})
    EXPECT_TRUE(m.params().contains(n)) << n;
}

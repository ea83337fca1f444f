#include <gtest/gtest.h>

#include "aerialvg/encoders.hpp"
#include "aerialvg/grad_check.hpp"
#include "test_util.hpp"

using namespace aerialvg;
using aerialvg::testing::values;
using aerialvg::testing::weighted_sum;

namespace {

struct Fixture {
  ParameterSet params;
  RngState rng{21};
  ImageEncoder image;
  TextEncoder text;

  Fixture() {
    ParamScope s{params, "", rng};
    image = ImageEncoder::make(s.sub("image"), 32);
    text = TextEncoder::make(s.sub("text"), kVocabSize, 32);
  }
};

ImageRaster noise_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  ImageRaster img = ImageRaster::filled(h, w, 0, 0, 0);
  RngState r(seed);
  for (auto& v : img.pixels) v = r.uniform();
  return img;
}

}  // namespace

TEST(ImageEncoder, LevelShapes64) {
  Fixture f;
  const auto pyr = f.image.encode(noise_image(64, 64, 1));
  const std::size_t want[4] = {16, 8, 4, 2};
  for (std::size_t i = 0; i < kNumLevels; ++i) {
    EXPECT_EQ(pyr.levels[i].height, want[i]);
    EXPECT_EQ(pyr.levels[i].width, want[i]);
    EXPECT_EQ(pyr.levels[i].stride, kLevelStrides[i]);
    EXPECT_EQ(pyr.levels[i].features.shape(), (Shape{want[i] * want[i], 32}));
  }
  EXPECT_EQ(pyr.positions(), 256u + 64u + 16u + 4u);
  EXPECT_EQ(pyr.flattened().shape(), (Shape{340, 32}));
}

TEST(ImageEncoder, LevelShapes32) {
  Fixture f;
  const auto pyr = f.image.encode(noise_image(32, 32, 2));
  const std::size_t want[4] = {8, 4, 2, 1};
  for (std::size_t i = 0; i < kNumLevels; ++i) EXPECT_EQ(pyr.levels[i].positions(), want[i] * want[i]);
}

TEST(ImageEncoder, ZeroEmbeddingGivesZeroLevelOne) {
  Fixture f;
  for (double& v : f.image.patch_embed.weight.mutable_data()) v = 0.0;
  for (double& v : f.image.patch_embed.bias.mutable_data()) v = 0.0;
  const auto pyr = f.image.encode(ImageRaster::filled(64, 64, 0, 0, 0));
  for (double v : pyr.levels[0].features.data()) EXPECT_EQ(v, 0.0);
}

TEST(ImageEncoder, RejectsBadSizes) {
  Fixture f;
  EXPECT_THROW(f.image.encode(ImageRaster::filled(48, 64, 0, 0, 0)), InputError);
  EXPECT_THROW(f.image.encode(ImageRaster::filled(64, 40, 0, 0, 0)), InputError);
}

TEST(ImageEncoder, DeterministicAndPositionsShrink) {
  Fixture f;
  const auto img = noise_image(96, 64, 3);
  EXPECT_EQ(values(f.image.encode(img).flattened()), values(f.image.encode(img).flattened()));
  const auto pyr = f.image.encode(img);
  for (std::size_t i = 0; i < kNumLevels; ++i) {
    EXPECT_EQ(pyr.levels[i].positions(), 96 * 64 / (kLevelStrides[i] * kLevelStrides[i]));
    if (i > 0) {
      EXPECT_LT(pyr.levels[i].positions(), pyr.levels[i - 1].positions());
    }
  }
}

TEST(TextEncoder, SingleTokenPooledIsTheRow) {
  Fixture f;
  const std::vector<int> tok = {3};
  const auto t = f.text.encode(tok);
  EXPECT_EQ(t.count(), 1u);
  EXPECT_EQ(values(t.pooled), values(t.tokens));
}

TEST(TextEncoder, PooledIsRowMean) {
  Fixture f;
  const std::vector<int> tok = {0, 4, 9, 16, 22};
  const auto t = f.text.encode(tok);
  for (std::size_t c = 0; c < 32; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < 5; ++r) s += t.tokens[r * 32 + c];
    EXPECT_NEAR(t.pooled[c], s / 5.0, 1e-12);
  }
}

TEST(TextEncoder, RepeatedTokenDiffersByPosition) {
  Fixture f;
  const std::vector<int> tok = {5, 5};
  const auto v = values(f.text.encode(tok).tokens);
  EXPECT_NE(std::vector<double>(v.begin(), v.begin() + 32), std::vector<double>(v.begin() + 32, v.end()));
}

TEST(TextEncoder, Errors) {
  Fixture f;
  EXPECT_THROW(f.text.encode(std::vector<int>{}), InputError);
  EXPECT_THROW(f.text.encode(std::vector<int>{1, static_cast<int>(kVocabSize)}), InputError);
  EXPECT_THROW(f.text.encode(std::vector<int>{-1}), InputError);
  EXPECT_THROW(f.text.encode(std::vector<int>(kMaxTokens + 1, 0)), InputError);
  EXPECT_NO_THROW(f.text.encode(std::vector<int>(kMaxTokens, 0)));
}

TEST(TextEncoder, GradCheckFiveTokens) {
  Fixture f;
  const std::vector<int> tok = {0, 1, 7, 14, 22};
  RngState rng(2);
  std::vector<std::pair<std::string, Tensor>> text_params;
  for (const auto& e : f.params.entries())
    if (e.first.rfind("text.", 0) == 0) text_params.push_back(e);
  for (const auto& pc :
       grad_check_params([&] { return weighted_sum(f.text.encode(tok).tokens); }, text_params, 6, rng)) {
    EXPECT_LT(pc.max_rel_error, 1e-4) << pc.name;
  }
}

TEST(PositionCode, ShapeAndDistinctRows) {
  const Tensor code = grid_position_code(4, 4, 32);
  EXPECT_EQ(code.shape(), (Shape{16, 32}));
  for (std::size_t a = 0; a < 16; ++a)
    for (std::size_t b = a + 1; b < 16; ++b) {
      double diff = 0.0;
      for (std::size_t c = 0; c < 32; ++c) diff += std::abs(code[a * 32 + c] - code[b * 32 + c]);
      EXPECT_GT(diff, 1e-3) << a << " " << b;
    }
}

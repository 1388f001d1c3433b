#include <gtest/gtest.h>

#include <random>

#include "ssc/superpixel.hpp"
#include "test_util.hpp"

namespace ssc {
namespace {

Tensor<float> row_image(const std::vector<std::array<float, 3>>& px) {
  Tensor<float> t(Shape{3, 1, static_cast<int>(px.size())});
  for (std::size_t x = 0; x < px.size(); ++x)
    for (int c = 0; c < 3; ++c) t.at(c, 0, static_cast<int>(x)) = px[x][static_cast<std::size_t>(c)];
  return t;
}

TEST(Felzenszwalb, ConstantImageIsOneRegion) {
  const Tensor<float> img(Shape{3, 16, 16}, 0.4f);
  const auto sp = felzenszwalb_segment(img, 1.0, 1, 0.8);
  EXPECT_EQ(sp.num_regions, 1);
  EXPECT_EQ(felzenszwalb_segment(Tensor<float>(Shape{3, 1, 1}, 0.2f), 1.0, 1, 0.0).num_regions, 1);
}

TEST(Felzenszwalb, ThreePixelRow) {
  const auto sp = felzenszwalb_segment(row_image({{0, 0, 0}, {0, 0, 0}, {1, 1, 1}}), 0.1, 1, 0.0);
  EXPECT_EQ(sp.num_regions, 2);
  EXPECT_EQ(sp.labels.data, (std::vector<int>{0, 0, 1}));
}

TEST(Felzenszwalb, RejectsBadArguments) {
  const Tensor<float> img(Shape{3, 4, 4}, 0.4f);
  EXPECT_THROW(felzenszwalb_segment(img, 0.0, 1, 0.8), ArgumentError);
  EXPECT_THROW(felzenszwalb_segment(img, 1.0, 0, 0.8), ArgumentError);
  EXPECT_THROW(felzenszwalb_segment(img, 1.0, 1, -1.0), ArgumentError);
}

TEST(Felzenszwalb, ValidPartitionOnRandomImages) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const auto img = testing::random_tensor(Shape{3, 16, 16}, rng, 0, 1).cast<float>();
    const auto sp = felzenszwalb_segment(img, uniform(rng, 1, 500), uniform_int(rng, 1, 8), uniform(rng, 0, 1));
    ASSERT_TRUE(is_valid_partition(sp, false)) << rep;
  }
}

TEST(MergeToBudget, NoOpUnderBudget) {
  std::mt19937_64 rng(2);
  const auto img = testing::random_tensor(Shape{3, 16, 16}, rng, 0, 1).cast<float>();
  const auto sp = split_4connected(felzenszwalb_segment(img, 2000, 8, 0.8));
  ASSERT_LE(sp.num_regions, 64);
  EXPECT_EQ(merge_to_budget(sp, img, 64), sp);
  EXPECT_THROW(merge_to_budget(sp, img, 0), ArgumentError);
}

TEST(MergeToBudget, IdenticalColoursMergeFirst) {
  // Regions 0 and 1 share a colour, region 2 differs; all the same size.
  std::vector<std::array<float, 3>> px;
  for (int i = 0; i < 8; ++i) px.push_back({0.9f, 0.1f, 0.1f});
  for (int i = 0; i < 4; ++i) px.push_back({0.1f, 0.1f, 0.9f});
  const auto img = row_image(px);
  SuperpixelMap sp{LabelRaster(1, 12), 3};
  sp.labels.data = {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
  const auto out = merge_to_budget(sp, img, 2);
  EXPECT_EQ(out.num_regions, 2);
  EXPECT_EQ(out.labels.data, (std::vector<int>{0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1}));
}

TEST(MergeToBudget, BudgetRespectedOnNoisyImages) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const auto img = testing::random_tensor(Shape{3, 32, 32}, rng, 0, 1).cast<float>();
    const auto sp = split_4connected(felzenszwalb_segment(img, 1.0, 1, 0.0));
    ASSERT_GT(sp.num_regions, 64);
    const auto out = merge_to_budget(sp, img, 64);
    EXPECT_EQ(out.num_regions, 64);
    EXPECT_TRUE(is_valid_partition(out, true));
  }
}

TEST(ComputeSuperpixels, CorpusImagesGiveConnectedPartitionsWithinBudget) {
  const auto dir = testing::scratch_dir("sp_corpus");
  generate_synthetic_corpus(dir, SyntheticSpec{8, 3, 64, 5});
  const auto c = Corpus::open(dir);
  for (const auto& s : c) {
    const auto sp = compute_superpixels(s.image.pixels, SuperpixelParams::defaults_for(64, 64));
    EXPECT_LE(sp.num_regions, 64);
    EXPECT_TRUE(is_valid_partition(sp, true)) << s.image.id;
    EXPECT_EQ(sp, compute_superpixels(s.image.pixels, SuperpixelParams::defaults_for(64, 64)));
  }
}

TEST(RegionIndex, Examples) {
  SuperpixelMap sp{LabelRaster(2, 2), 2};
  sp.labels.data = {0, 0, 1, 1};
  const auto idx = region_index(sp);
  EXPECT_EQ(idx.sizes, (std::vector<int>{2, 2}));
  EXPECT_EQ(idx.region_of(1, 0), 1);
  SuperpixelMap one{LabelRaster(3, 5, 0), 1};
  EXPECT_EQ(region_index(one).pixels[0].size(), 15u);
}

TEST(Split4Connected, DiagonalNeighboursSeparate) {
  SuperpixelMap sp{LabelRaster(2, 2), 2};
  sp.labels.data = {0, 1, 1, 0};
  EXPECT_FALSE(is_valid_partition(sp, true));
  const auto s = split_4connected(sp);
  EXPECT_EQ(s.num_regions, 4);
}

TEST(Cache, RoundTripAndCorruption) {
  const auto dir = testing::scratch_dir("sp_cache");
  SuperpixelMap sp{LabelRaster(2, 3), 3};
  sp.labels.data = {0, 0, 1, 2, 2, 1};
  save_superpixels(dir / "a.sscs", sp);
  EXPECT_EQ(load_superpixels(dir / "a.sscs"), sp);
  EXPECT_EQ(fs::file_size(dir / "a.sscs"), 20u + 12u);
  SuperpixelMap bad{LabelRaster(1, 2), 3};
  bad.labels.data = {0, 1};  // region 2 empty
  save_superpixels(dir / "b.sscs", bad);
  EXPECT_THROW(load_superpixels(dir / "b.sscs"), IoError);
  EXPECT_THROW(load_superpixels(dir / "none.sscs"), IoError);
}

TEST(Downsample, TakesTopLeftSample) {
  LabelRaster l(4, 4);
  for (int i = 0; i < 16; ++i) l.data[static_cast<std::size_t>(i)] = i;
  const auto d = downsample_labels(l, 2);
  EXPECT_EQ(d.data, (std::vector<int>{0, 2, 8, 10}));
}

}  // namespace
}  // namespace ssc

#include <gtest/gtest.h>

#include <random>

#include "ssc/model.hpp"
#include "ssc/self_modulation.hpp"
#include "test_util.hpp"

namespace ssc {
namespace {

Tensor<double> map1(int h, int w, std::vector<double> v) { return Tensor<double>(Shape{1, h, w}, std::move(v)); }

TEST(Erosion, ThreeByThreeKeepsOnlyCentre) {
  const BinaryMask ones(3, 3, 1);
  const auto m = erode(ones, 3);
  EXPECT_EQ(m.data, (std::vector<std::uint8_t>{0, 0, 0, 0, 1, 0, 0, 0, 0}));
}

TEST(Erosion, SizeOneIsIdentity) {
  std::mt19937_64 rng(1);
  BinaryMask m(7, 5);
  for (auto& v : m.data) v = uniform01(rng) < 0.5;
  EXPECT_EQ(erode(m, 1), m);
  EXPECT_THROW(erode(m, 0), ArgumentError);
}

TEST(ReliableMask, ThresholdThenErode) {
  ModulationConfig cfg;
  cfg.erosion_r = 1;
  const auto cam = map1(1, 4, {0.1, 0.3, 0.29, 0.9});
  EXPECT_EQ(reliable_mask(cam, cfg).data, (std::vector<std::uint8_t>{0, 1, 0, 1}));
  const auto low = map1(2, 2, {0.1, 0.2, 0.0, 0.29});
  cfg.erosion_r = 8;
  for (auto v : reliable_mask(low, cfg).data) EXPECT_EQ(v, 0);
}

TEST(RegionalCam, Examples) {
  EXPECT_EQ(regional_cam(map1(1, 3, {-1, -2, -0.1})).storage(), (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(regional_cam(map1(1, 4, {2, 2, 4, 4})).storage(), (std::vector<double>{0.5, 0.5, 1, 1}));
}

TEST(ReliableSelection, Examples) {
  // A = 0.9 inside the mask with regional value 0.4 -> 0.9; outside -> regional.
  BinaryMask m(1, 2);
  m.data = {1, 0};
  const auto out = apply_reliable_selection(map1(1, 2, {0.4, 0.4}), map1(1, 2, {0.9, 0.9}), m);
  EXPECT_EQ(out.storage(), (std::vector<double>{0.9, 0.4}));
  const auto keep = apply_reliable_selection(map1(1, 2, {0.7, 0.2}), map1(1, 2, {0.5, 0.1}), BinaryMask(1, 2, 1));
  EXPECT_EQ(keep.storage(), (std::vector<double>{0.7, 0.2}));
}

TEST(AlignmentLoss, Examples) {
  ag::Tape<double> tape;
  auto a = tape.constant(map1(1, 1, {1.0}));
  EXPECT_EQ(alignment_loss(tape, {a}, {map1(1, 1, {0.0})}).item(), 1.0);
  EXPECT_EQ(alignment_loss(tape, {a}, {map1(1, 1, {1.0})}).item(), 0.0);
  EXPECT_EQ(alignment_loss<double>(tape, {}, {}).item(), 0.0);
  // Doubling the area with identical per-pixel errors leaves the loss unchanged.
  auto b = tape.constant(map1(2, 2, {1, 1, 1, 1}));
  auto c = tape.constant(map1(2, 4, {1, 1, 1, 1, 1, 1, 1, 1}));
  EXPECT_EQ(alignment_loss(tape, {b}, {map1(2, 2, {0.5, 0.5, 0.5, 0.5})}).item(),
            alignment_loss(tape, {c}, {Tensor<double>(Shape{1, 2, 4}, 0.5)}).item());
  EXPECT_THROW(alignment_loss(tape, {a, a}, {map1(1, 1, {0.0})}), ArgumentError);
}

TEST(AlignmentLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    const auto x = testing::random_tensor(Shape{2, 4, 4}, rng);
    const auto t0 = testing::random_tensor(Shape{1, 4, 4}, rng, 0, 1);
    const auto t1 = testing::random_tensor(Shape{1, 4, 4}, rng, 0, 1);
    auto f = [&](ag::Var<double> v) {
      auto a0 = nn::normalize_cam(ag::channel(v, 0));
      auto a1 = nn::normalize_cam(ag::channel(v, 1));
      return alignment_loss(*v.tape, {a0, a1}, {t0, t1});
    };
    EXPECT_LT(testing::max_grad_error(f, x), 1e-5);
  }
}

TEST(ModulationTarget, ConstantWithinSuperpixelsWithoutSelection) {
  std::mt19937_64 rng(3);
  LabelRaster sp(4, 4);
  sp.data = {0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3};
  const auto f = testing::random_tensor(Shape{1, 4, 4}, rng, -1, 2);
  const auto cam = nn::normalize_cam(f);
  ModulationConfig cfg;
  const auto t = modulation_target(f, cam, sp, cfg, false);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      if (sp.data[i] == sp.data[j]) {
        EXPECT_EQ(t[i], t[j]);
      }
  cfg.erosion_r = 1;
  const auto rs = modulation_target(f, cam, sp, cfg, true);
  for (int i = 0; i < 16; ++i) {
    EXPECT_GE(rs[i], t[i]);
    EXPECT_LE(rs[i], std::max(t[i], cam[i]));
  }
}

TEST(AlignmentParts, OnlyPresentClassesAtHalfResolution) {
  ag::Tape<double> tape;
  std::mt19937_64 rng(4);
  auto f = tape.constant(testing::random_tensor(Shape{3, 4, 4}, rng));
  LabelRaster sp(16, 16, 0);
  ModulationConfig cfg;
  const auto parts = alignment_parts(f, {1, 0, 1}, sp, cfg, true, static_cast<const std::vector<Tensor<double>>*>(nullptr));
  ASSERT_EQ(parts.cams.size(), 2u);
  EXPECT_EQ(parts.cams[0].shape(), (Shape{1, 8, 8}));
  EXPECT_EQ(parts.targets[1].shape(), (Shape{1, 8, 8}));
}

TEST(Config, Validation) {
  ModulationConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.t_obj = 1.0;
  EXPECT_THROW(cfg.validate(), ArgumentError);
  cfg.t_obj = 0.3;
  cfg.erosion_r = 0;
  EXPECT_THROW(cfg.validate(), ArgumentError);
}

}  // namespace
}  // namespace ssc

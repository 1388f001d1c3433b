#include <gtest/gtest.h>

#include <random>

#include "ssc/reconstruction.hpp"
#include "test_util.hpp"

namespace ssc {
namespace {

TEST(Decoder, FourByFourCamToImage) {
  DecoderSpec spec;
  spec.in_channels = 3;
  spec.width = 8;
  ParamStore<float> store;
  std::mt19937_64 rng(1);
  init_decoder(store, spec, rng);
  ag::Tape<float> tape;
  Binder<float> p(tape, store, false);
  auto f = tape.constant(testing::random_tensor(Shape{3, 4, 4}, rng, -5, 5).cast<float>());
  const auto& img = reconstruct(f, p, spec).value();
  EXPECT_EQ(img.shape(), (Shape{3, 64, 64}));
  for (float v : img) {
    EXPECT_GT(v, -1.0f);
    EXPECT_LT(v, 1.0f);
  }
  auto wrong = tape.constant(Tensor<float>(Shape{2, 4, 4}, 0.0f));
  EXPECT_THROW(reconstruct(wrong, p, spec), ArgumentError);
  EXPECT_TRUE(has_decoder(store));
  EXPECT_EQ(decoder_spec_from(store).width, 8);
  EXPECT_EQ(decoder_spec_from(store).num_up, 4);
}

TEST(Decoder, GradientsMatchFiniteDifferences) {
  DecoderSpec spec;
  spec.in_channels = 2;
  spec.width = 3;
  spec.num_up = 1;
  ParamStore<double> store;
  std::mt19937_64 rng(2);
  init_decoder(store, spec, rng);
  const auto f = testing::random_tensor(Shape{2, 3, 3}, rng);
  auto loss = [&](ag::Tape<double>& tape, Binder<double>& p) { return ag::mean(reconstruct(tape.constant(f), p, spec)); };
  for (const auto& e : std::vector<std::string>{"decoder.head.conv.w", "decoder.res.norm1.g", "decoder.up0.tconv.w",
                                                "decoder.tail.conv.b", "decoder.tail.conv.w"}) {
    EXPECT_LT(testing::max_param_grad_error(store, e, loss), 1e-5) << e;
  }
  // up0.tconv.b is skipped: the following group norm cancels it exactly.
  // And with respect to the features.
  auto wrt_f = [&](ag::Var<double> v) {
    Binder<double> p(*v.tape, store, false);
    return ag::mean(reconstruct(v, p, spec));
  };
  EXPECT_LT(testing::max_grad_error(wrt_f, f), 1e-5);
}

TEST(Perceptual, StageWeights) {
  EXPECT_EQ(perceptual_weights(5), (std::vector<double>{0.03125, 0.0625, 0.125, 0.25, 0.5}));
  EXPECT_EQ(perceptual_weights(1), (std::vector<double>{0.5}));
}

TEST(Perceptual, StageLossExamples) {
  ag::Tape<double> tape;
  auto a = tape.constant(Tensor<double>(Shape{1, 1, 1}, 2.0));
  auto b = tape.constant(Tensor<double>(Shape{1, 1, 1}, 3.0));
  EXPECT_EQ(stage_loss(a, b).item(), 1.0);
  EXPECT_EQ(stage_loss(b, a).item(), 1.0);
  EXPECT_EQ(stage_loss(a, a).item(), 0.0);
}

TEST(Perceptual, SingleStageWithUnitLossIsHalf) {
  LossNetworkSpec ls;
  ls.widths = {1};
  LossNetwork<double> net(ls);
  // 1x1 images with zero padding: only the centre taps see the pixel, so
  // the single feature is (r + g + b) / 3 and the stage loss is |1 - 0|.
  net.mutable_params().value(LossNetwork<double>::w_name(0)).fill(1.0 / 3);
  ag::Tape<double> tape;
  auto one = tape.constant(Tensor<double>(Shape{3, 1, 1}, 1.0));
  auto zero = tape.constant(Tensor<double>(Shape{3, 1, 1}, 0.0));
  EXPECT_NEAR(perceptual_loss(one, zero, net).item(), 0.5, 1e-15);
}

TEST(Perceptual, IdentitySymmetryAndNonNegativity) {
  LossNetwork<double> net;
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    ag::Tape<double> tape;
    auto a = tape.constant(testing::random_tensor(Shape{3, 32, 32}, rng));
    auto b = tape.constant(testing::random_tensor(Shape{3, 32, 32}, rng));
    EXPECT_EQ(perceptual_loss(a, a, net).item(), 0.0);
    const double ab = perceptual_loss(a, b, net).item();
    EXPECT_GT(ab, 0.0);
    EXPECT_NEAR(ab, perceptual_loss(b, a, net).item(), 1e-15);
  }
}

TEST(Perceptual, GradientReachesImageNotWeights) {
  LossNetworkSpec ls;
  ls.widths = {3, 4};
  LossNetwork<double> net(ls);
  const auto before = net.params();
  std::mt19937_64 rng(4);
  const auto target = testing::random_tensor(Shape{3, 8, 8}, rng);
  const auto x = testing::random_tensor(Shape{3, 8, 8}, rng);
  EXPECT_LT(testing::max_grad_error(
                [&](ag::Var<double> v) { return perceptual_loss(v, v.tape->constant(target), net); }, x),
            1e-6);
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_EQ(before.entries()[i].value, net.params().entries()[i].value);
}

TEST(PixelLoss, Examples) {
  ag::Tape<double> tape;
  auto a = tape.constant(Tensor<double>(Shape{3, 2, 2}, 0.25));
  auto b = tape.constant(Tensor<double>(Shape{3, 2, 2}, 0.75));
  EXPECT_EQ(pixel_loss(a, a, PixelLossKind::kL1).item(), 0.0);
  EXPECT_EQ(pixel_loss(a, a, PixelLossKind::kL2).item(), 0.0);
  EXPECT_EQ(pixel_loss(a, b, PixelLossKind::kL1).item(), 0.5);
  EXPECT_EQ(pixel_loss(a, b, PixelLossKind::kL2).item(), 0.25);
  EXPECT_THROW(parse_pixel_loss("l3"), ArgumentError);
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    auto x = tape.constant(testing::random_tensor(Shape{3, 4, 4}, rng, 0, 1));
    auto y = tape.constant(testing::random_tensor(Shape{3, 4, 4}, rng, 0, 1));
    EXPECT_LE(pixel_loss(x, y, PixelLossKind::kL2).item(), pixel_loss(x, y, PixelLossKind::kL1).item());
  }
}

TEST(LossNetwork, WeightFileRoundTripAndShapeCheck) {
  const auto dir = testing::scratch_dir("lossnet");
  LossNetworkSpec other;
  other.seed = 99;
  LossNetwork<float> a, b(other);
  save_checkpoint(dir / "w.ssck", b.params());
  a.load_weights(dir / "w.ssck");
  EXPECT_EQ(a.params().value(LossNetwork<float>::w_name(2)), b.params().value(LossNetwork<float>::w_name(2)));
  LossNetworkSpec narrow;
  narrow.widths = {4, 16, 32, 32, 32};
  save_checkpoint(dir / "bad.ssck", LossNetwork<float>(narrow).params());
  EXPECT_THROW(a.load_weights(dir / "bad.ssck"), ConfigError);
}

}  // namespace
}  // namespace ssc

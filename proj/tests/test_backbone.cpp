#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ssc/backbone.hpp"
#include "test_util.hpp"

namespace ssc {
namespace {

TEST(Backbone, FeatureGridIsInputOverStride) {
  BackboneSpec spec;
  spec.widths = {4, 8, 8, 8};
  ParamStore<float> store;
  std::mt19937_64 rng(1);
  init_backbone(store, spec, rng);
  ag::Tape<float> tape;
  Binder<float> p(tape, store, false);
  auto img = tape.constant(testing::random_tensor(Shape{3, 64, 64}, rng, 0, 1).cast<float>());
  const auto out = forward_features(img, p, spec, true);
  EXPECT_EQ(out.features.shape(), (Shape{3, 4, 4}));
  for (float v : out.features.value()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(classify(out.features).shape(), (Shape{3}));
  EXPECT_EQ(out.stage_outs.size(), 4u);
  auto bad = tape.constant(Tensor<float>(Shape{3, 40, 40}, 0.5f));
  EXPECT_THROW(forward_features(bad, p, spec, true), ArgumentError);
}

TEST(Backbone, ZeroClassifierGivesZeroFeaturesAndLogits) {
  BackboneSpec spec;
  spec.widths = {4, 4};
  ParamStore<double> store;
  std::mt19937_64 rng(2);
  init_backbone(store, spec, rng);
  store.value(backbone_names::kClassifier) = Tensor<double>(store.value(backbone_names::kClassifier).shape(), 0.0);
  ag::Tape<double> tape;
  Binder<double> p(tape, store, false);
  auto img = tape.constant(testing::random_tensor(Shape{3, 16, 16}, rng, 0, 1));
  const auto out = forward_features(img, p, spec, false);
  for (double v : out.features.value()) EXPECT_EQ(v, 0.0);
  for (double v : classify(out.features).value()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, SuppressionOnlyTouchesValuesAboveThreshold) {
  BackboneSpec spec;
  spec.widths = {6};
  spec.drs_stages = 1;
  ParamStore<double> store;
  std::mt19937_64 rng(3);
  init_backbone(store, spec, rng);
  ag::Tape<double> tape;
  Binder<double> p(tape, store, false);
  auto img = tape.constant(testing::random_tensor(Shape{3, 32, 32}, rng, 0, 1));
  const auto& off = forward_features(img, p, spec, false).stage_outs[0].value();
  const auto& on = forward_features(img, p, spec, true).stage_outs[0].value();
  const int c = off.dim(0), n = off.dim(1) * off.dim(2);
  int changed = 0;
  for (int k = 0; k < c; ++k) {
    double mx = 0;
    for (int i = 0; i < n; ++i) mx = std::max(mx, off[k * n + i]);
    for (int i = 0; i < n; ++i) {
      const double a = off[k * n + i], b = on[k * n + i];
      if (a > 0.55 * mx) {
        EXPECT_DOUBLE_EQ(b, 0.55 * mx);
        changed += a != b;
      } else {
        EXPECT_EQ(a, b);
      }
    }
  }
  EXPECT_GT(changed, 0);
}

TEST(Backbone, SpecRecoveredFromParameters) {
  BackboneSpec spec;
  spec.widths = {4, 8, 12};
  spec.num_classes = 5;
  ParamStore<float> store;
  std::mt19937_64 rng(4);
  init_backbone(store, spec, rng);
  const auto back = backbone_spec_from(store);
  EXPECT_EQ(back.widths, spec.widths);
  EXPECT_EQ(back.num_classes, 5);
  EXPECT_THROW(backbone_spec_from(ParamStore<float>{}), ConfigError);
}

TEST(Backbone, ClassificationLossGradientsReachEveryParameter) {
  BackboneSpec spec;
  spec.widths = {3, 4};
  spec.num_classes = 2;
  ParamStore<double> store;
  std::mt19937_64 rng(5);
  init_backbone(store, spec, rng);
  ag::Tape<double> tape;
  Binder<double> p(tape, store, true);
  auto img = tape.constant(testing::random_tensor(Shape{3, 16, 16}, rng, 0, 1));
  auto loss = classification_loss(classify(forward_features(img, p, spec, true).features), {1, 0});
  tape.backward(loss);
  p.accumulate_grads(1.0);
  for (const auto& e : store.entries()) {
    EXPECT_EQ(store.grad(e.name).shape(), e.value.shape()) << e.name;
    double norm = 0;
    for (double g : store.grad(e.name)) norm += g * g;
    EXPECT_TRUE(std::isfinite(norm)) << e.name;
  }
}

}  // namespace
}  // namespace ssc

#pragma once

#include <random>
#include <string>
#include <vector>

#include "ssc/autograd.hpp"
#include "ssc/nn.hpp"
#include "ssc/params.hpp"

namespace ssc {

// Convolutional classifier: per stage 3x3 conv, layer norm, ReLU, 2x max
// pool; then a bias-free 1x1 conv to one channel per class. The class
// channels F are both the CAM source and (through global average pooling)
// the logits.
struct BackboneSpec {
  int in_channels = 3;
  std::vector<int> widths{16, 32, 64, 64};
  int num_classes = 3;
  // Suppression is applied to the outputs of this many final stages.
  int drs_stages = 2;
  double drs_delta = 0.55;

  int stride() const { return 1 << widths.size(); }
  int num_stages() const { return static_cast<int>(widths.size()); }
};

namespace backbone_names {
inline std::string conv_w(int s) { return "backbone.s" + std::to_string(s) + ".conv.w"; }
inline std::string conv_b(int s) { return "backbone.s" + std::to_string(s) + ".conv.b"; }
inline std::string norm_g(int s) { return "backbone.s" + std::to_string(s) + ".norm.g"; }
inline std::string norm_b(int s) { return "backbone.s" + std::to_string(s) + ".norm.b"; }
inline const std::string kClassifier = "backbone.cls.w";
}  // namespace backbone_names

template <typename T>
void init_backbone(ParamStore<T>& store, const BackboneSpec& spec, std::mt19937_64& rng) {
  int cin = spec.in_channels;
  for (int s = 0; s < spec.num_stages(); ++s) {
    const int cout = spec.widths[static_cast<std::size_t>(s)];
    store.add(backbone_names::conv_w(s), he_normal<T>(Shape{cout, cin, 3, 3}, cin * 9, rng));
    store.add(backbone_names::conv_b(s), Tensor<T>(Shape{cout}, T(0)));
    store.add(backbone_names::norm_g(s), Tensor<T>(Shape{cout}, T(1)));
    store.add(backbone_names::norm_b(s), Tensor<T>(Shape{cout}, T(0)));
    cin = cout;
  }
  store.add(backbone_names::kClassifier, he_normal<T>(Shape{spec.num_classes, cin, 1, 1}, cin, rng));
}

// Recovers the architecture from stored parameter shapes.
template <typename T>
BackboneSpec backbone_spec_from(const ParamStore<T>& store) {
  BackboneSpec spec;
  spec.widths.clear();
  for (int s = 0; store.contains(backbone_names::conv_w(s)); ++s) {
    const auto& w = store.value(backbone_names::conv_w(s));
    if (s == 0) spec.in_channels = w.dim(1);
    spec.widths.push_back(w.dim(0));
  }
  if (spec.widths.empty() || !store.contains(backbone_names::kClassifier)) {
    throw ConfigError("checkpoint has no backbone parameters");
  }
  spec.num_classes = store.value(backbone_names::kClassifier).dim(0);
  spec.drs_stages = std::min(spec.drs_stages, spec.num_stages());
  return spec;
}

template <typename T>
struct BackboneOutput {
  ag::Var<T> features;                 // F: num_classes x H/stride x W/stride
  std::vector<ag::Var<T>> stage_outs;  // post-pool output of every stage
};

// image: 3 x H x W variable, H and W divisible by the stride.
template <typename T>
BackboneOutput<T> forward_features(ag::Var<T> image, Binder<T>& p, const BackboneSpec& spec, bool drs_enabled) {
  const auto& shape = image.shape();
  if (shape.size() != 3 || shape[0] != spec.in_channels || shape[1] % spec.stride() != 0 ||
      shape[2] % spec.stride() != 0 || shape[1] == 0 || shape[2] == 0) {
    throw ArgumentError("forward_features: input " + shape_str(shape) + " not divisible by stride " +
                        std::to_string(spec.stride()));
  }
  BackboneOutput<T> out;
  ag::Var<T> x = image;
  for (int s = 0; s < spec.num_stages(); ++s) {
    using namespace backbone_names;
    x = nn::conv2d(x, p(conv_w(s)), p(conv_b(s)), 1, 1);
    x = nn::group_norm(x, p(norm_g(s)), p(norm_b(s)), 1);
    x = ag::relu(x);
    x = nn::max_pool2(x);
    if (drs_enabled && s >= spec.num_stages() - spec.drs_stages) x = nn::drs_suppress(x, static_cast<T>(spec.drs_delta));
    out.stage_outs.push_back(x);
  }
  out.features = nn::conv2d(x, p(backbone_names::kClassifier), ag::Var<T>{}, 1, 0);
  return out;
}

// Logits by global average pooling of the class channels.
template <typename T>
ag::Var<T> classify(ag::Var<T> features) {
  return nn::global_avg_pool(features);
}

template <typename T>
ag::Var<T> classification_loss(ag::Var<T> logits, const std::vector<int>& y) {
  return nn::soft_margin_loss(logits, y);
}

}  // namespace ssc

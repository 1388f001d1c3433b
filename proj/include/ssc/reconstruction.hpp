#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ssc/autograd.hpp"
#include "ssc/nn.hpp"
#include "ssc/params.hpp"

namespace ssc {

// Decoder from CAM features back to an RGB image:
//   head   3x3 conv, layer norm, ReLU
//   res    3x3 conv, layer norm, ReLU, 3x3 conv, layer norm, + identity
//   up x N 4x4 transposed conv (x2), instance norm, ReLU, 3x3 conv, layer norm, ReLU
//   tail   3x3 conv, tanh
struct DecoderSpec {
  int in_channels = 3;
  int width = 32;
  int num_up = 4;

  int scale() const { return 1 << num_up; }
};

namespace decoder_names {
inline std::string up(int i, const std::string& leaf) { return "decoder.up" + std::to_string(i) + "." + leaf; }
}  // namespace decoder_names

template <typename T>
void init_decoder(ParamStore<T>& store, const DecoderSpec& spec, std::mt19937_64& rng) {
  const int w = spec.width;
  auto conv = [&](const std::string& prefix, int cin, int cout) {
    store.add(prefix + ".w", he_normal<T>(Shape{cout, cin, 3, 3}, cin * 9, rng));
    store.add(prefix + ".b", Tensor<T>(Shape{cout}, T(0)));
  };
  auto norm = [&](const std::string& prefix, int c) {
    store.add(prefix + ".g", Tensor<T>(Shape{c}, T(1)));
    store.add(prefix + ".b", Tensor<T>(Shape{c}, T(0)));
  };
  conv("decoder.head.conv", spec.in_channels, w);
  norm("decoder.head.norm", w);
  conv("decoder.res.conv1", w, w);
  norm("decoder.res.norm1", w);
  conv("decoder.res.conv2", w, w);
  norm("decoder.res.norm2", w);
  for (int i = 0; i < spec.num_up; ++i) {
    // Transposed conv fan-in: each output sees about (K/stride)^2 taps per input channel.
    store.add(decoder_names::up(i, "tconv.w"), he_normal<T>(Shape{w, w, 4, 4}, w * 4, rng));
    store.add(decoder_names::up(i, "tconv.b"), Tensor<T>(Shape{w}, T(0)));
    norm(decoder_names::up(i, "norm1"), w);
    conv(decoder_names::up(i, "conv"), w, w);
    norm(decoder_names::up(i, "norm2"), w);
  }
  store.add("decoder.tail.conv.w", he_normal<T>(Shape{3, w, 3, 3}, w * 9, rng));
  store.add("decoder.tail.conv.b", Tensor<T>(Shape{3}, T(0)));
}

template <typename T>
bool has_decoder(const ParamStore<T>& store) {
  return store.contains("decoder.head.conv.w");
}

template <typename T>
DecoderSpec decoder_spec_from(const ParamStore<T>& store) {
  if (!has_decoder(store)) throw ConfigError("checkpoint has no decoder parameters");
  DecoderSpec spec;
  const auto& head = store.value("decoder.head.conv.w");
  spec.in_channels = head.dim(1);
  spec.width = head.dim(0);
  spec.num_up = 0;
  while (store.contains(decoder_names::up(spec.num_up, "tconv.w"))) ++spec.num_up;
  return spec;
}

// Reconstruction in (-1, 1), 3 x (h * scale) x (w * scale).
template <typename T>
ag::Var<T> reconstruct(ag::Var<T> features, Binder<T>& p, const DecoderSpec& spec) {
  if (features.shape().size() != 3 || features.shape()[0] != spec.in_channels) {
    throw ArgumentError("reconstruct: features " + shape_str(features.shape()) + " but decoder expects " +
                        std::to_string(spec.in_channels) + " channels");
  }
  auto conv = [&](ag::Var<T> x, const std::string& prefix) {
    return nn::conv2d(x, p(prefix + ".w"), p(prefix + ".b"), 1, 1);
  };
  auto ln = [&](ag::Var<T> x, const std::string& prefix) {
    return nn::group_norm(x, p(prefix + ".g"), p(prefix + ".b"), 1);
  };
  ag::Var<T> x = ag::relu(ln(conv(features, "decoder.head.conv"), "decoder.head.norm"));
  ag::Var<T> r = ag::relu(ln(conv(x, "decoder.res.conv1"), "decoder.res.norm1"));
  r = ln(conv(r, "decoder.res.conv2"), "decoder.res.norm2");
  x = ag::add(x, r);
  for (int i = 0; i < spec.num_up; ++i) {
    using decoder_names::up;
    x = nn::conv_transpose2d(x, p(up(i, "tconv.w")), p(up(i, "tconv.b")), 2, 1);
    x = ag::relu(nn::group_norm(x, p(up(i, "norm1.g")), p(up(i, "norm1.b")), x.shape()[0]));
    x = ag::relu(ln(conv(x, up(i, "conv")), up(i, "norm2")));
  }
  return ag::tanh(conv(x, "decoder.tail.conv"));
}

// ---------------------------------------------------------------------------
// Loss network: frozen stages of (3x3 conv, ReLU, 2x average pool). The
// stage features are taken right before each pool.

struct LossNetworkSpec {
  std::vector<int> widths{8, 16, 32, 32, 32};
  std::uint64_t seed = 0x5eedf00dULL;
};

template <typename T>
class LossNetwork {
 public:
  explicit LossNetwork(const LossNetworkSpec& spec = {}) : spec_(spec) {
    std::mt19937_64 rng(spec.seed);
    int cin = 3;
    for (std::size_t j = 0; j < spec.widths.size(); ++j) {
      const int cout = spec.widths[j];
      params_.add(w_name(j), he_normal<T>(Shape{cout, cin, 3, 3}, cin * 9, rng));
      params_.add(b_name(j), Tensor<T>(Shape{cout}, T(0)));
      cin = cout;
    }
  }

  // Replaces the seeded weights by a stored set (same names and shapes).
  void load_weights(const std::filesystem::path& path) {
    auto loaded = load_checkpoint<T>(path);
    for (auto& e : params_.entries()) {
      const auto& src = loaded.value(e.name);
      if (src.shape() != e.value.shape()) {
        throw ConfigError(path.string() + ": loss network parameter " + e.name + " has shape " +
                          shape_str(src.shape()) + ", expected " + shape_str(e.value.shape()));
      }
      e.value = src;
    }
  }

  int num_stages() const { return static_cast<int>(spec_.widths.size()); }
  const ParamStore<T>& params() const { return params_; }
  ParamStore<T>& mutable_params() { return params_; }

  // image in [-1, 1]. Gradients flow through the network into the image
  // only; the weights enter the tape as constants.
  std::vector<ag::Var<T>> features(ag::Var<T> image) const {
    ag::Tape<T>& tape = *image.tape;
    std::vector<ag::Var<T>> out;
    ag::Var<T> x = image;
    for (int j = 0; j < num_stages(); ++j) {
      auto w = tape.external_leaf(params_.value(w_name(static_cast<std::size_t>(j))), false);
      auto b = tape.external_leaf(params_.value(b_name(static_cast<std::size_t>(j))), false);
      x = ag::relu(nn::conv2d(x, w, b, 1, 1));
      out.push_back(x);
      if (j + 1 < num_stages()) x = nn::avg_pool2(x);
    }
    return out;
  }

  static std::string w_name(std::size_t j) { return "lossnet.s" + std::to_string(j) + ".conv.w"; }
  static std::string b_name(std::size_t j) { return "lossnet.s" + std::to_string(j) + ".conv.b"; }

 private:
  LossNetworkSpec spec_;
  ParamStore<T> params_;
};

// Stage weights 1 / 2^(J + 1 - j), j = 1..J.
inline std::vector<double> perceptual_weights(int num_stages) {
  std::vector<double> w;
  for (int j = 1; j <= num_stages; ++j) w.push_back(1.0 / std::ldexp(1.0, num_stages + 1 - j));
  return w;
}

// Mean absolute difference between two stage feature maps.
template <typename T>
ag::Var<T> stage_loss(ag::Var<T> a, ag::Var<T> b) {
  return ag::mean_abs_diff(a, b);
}

// Both images in [-1, 1].
template <typename T>
ag::Var<T> perceptual_loss(ag::Var<T> recon, ag::Var<T> target, const LossNetwork<T>& net) {
  const auto fr = net.features(recon);
  const auto ft = net.features(target);
  const auto w = perceptual_weights(net.num_stages());
  std::vector<ag::Var<T>> terms;
  std::vector<T> weights;
  for (std::size_t j = 0; j < fr.size(); ++j) {
    terms.push_back(stage_loss(fr[j], ft[j]));
    weights.push_back(static_cast<T>(w[j]));
  }
  return ag::weighted_sum(terms, weights);
}

enum class PixelLossKind { kL1, kL2 };

inline PixelLossKind parse_pixel_loss(const std::string& s) {
  if (s == "l1" || s == "L1") return PixelLossKind::kL1;
  if (s == "l2" || s == "L2") return PixelLossKind::kL2;
  throw ArgumentError("unknown pixel loss kind '" + s + "' (expected l1 or l2)");
}

template <typename T>
ag::Var<T> pixel_loss(ag::Var<T> a, ag::Var<T> b, PixelLossKind kind) {
  return kind == PixelLossKind::kL1 ? ag::mean_abs_diff(a, b) : ag::mean_sq_diff(a, b);
}

}  // namespace ssc

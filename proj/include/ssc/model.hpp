#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ssc/autograd.hpp"
#include "ssc/backbone.hpp"
#include "ssc/nn.hpp"
#include "ssc/params.hpp"
#include "ssc/reconstruction.hpp"
#include "ssc/self_modulation.hpp"
#include "ssc/superpixel.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

struct ModelSpec {
  BackboneSpec backbone;
  std::optional<DecoderSpec> decoder;
  // Decoder reads the output of stage (num_stages - 2) instead of F.
  bool cdr_early = false;
  bool drs_enabled = true;

  int early_stage() const { return backbone.num_stages() - 2; }

  // Decoder geometry implied by the backbone and the feature source.
  DecoderSpec decoder_for(int width) const {
    DecoderSpec d;
    d.width = width;
    if (cdr_early) {
      d.in_channels = backbone.widths[static_cast<std::size_t>(early_stage())];
      d.num_up = early_stage() + 1;
    } else {
      d.in_channels = backbone.num_classes;
      d.num_up = backbone.num_stages();
    }
    return d;
  }
};

template <typename T>
struct Model {
  ModelSpec spec;
  ParamStore<T> params;
};

// Backbone and decoder draw from separate streams so adding a decoder never
// changes the backbone initialisation.
template <typename T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  Model<T> m{spec, {}};
  std::mt19937_64 bb_rng(seed);
  init_backbone(m.params, spec.backbone, bb_rng);
  if (spec.decoder) {
    std::mt19937_64 dec_rng(seed ^ 0xdec0de5eedULL);
    init_decoder(m.params, *spec.decoder, dec_rng);
  }
  return m;
}

inline constexpr const char* kMetaDrs = "meta.drs_enabled";
inline constexpr const char* kMetaCdrEarly = "meta.cdr_early";

template <typename T>
void save_model(const std::filesystem::path& path, const Model<T>& m) {
  ParamStore<T> out;
  for (const auto& e : m.params.entries()) out.add(e.name, e.value);
  out.add(kMetaDrs, Tensor<T>(Shape{}, T(m.spec.drs_enabled ? 1 : 0)));
  out.add(kMetaCdrEarly, Tensor<T>(Shape{}, T(m.spec.cdr_early ? 1 : 0)));
  save_checkpoint(path, out);
}

template <typename T>
Model<T> load_model(const std::filesystem::path& path) {
  auto stored = load_checkpoint<T>(path);
  Model<T> m;
  for (const auto& e : stored.entries())
    if (e.name.rfind("meta.", 0) != 0) m.params.add(e.name, e.value);
  m.spec.backbone = backbone_spec_from(m.params);
  m.spec.drs_enabled = stored.contains(kMetaDrs) && stored.value(kMetaDrs)[0] != T(0);
  m.spec.cdr_early = stored.contains(kMetaCdrEarly) && stored.value(kMetaCdrEarly)[0] != T(0);
  if (has_decoder(m.params)) m.spec.decoder = decoder_spec_from(m.params);
  return m;
}

// Which loss components a step evaluates, and how.
struct LossSwitches {
  bool cdr = true;
  bool asm_ = true;
  bool ras = true;
  double beta_p = 1.0;
  double beta_a = 1.0;
  std::string recon_loss = "perceptual";  // perceptual | l1 | l2
  ModulationConfig modulation;
};

template <typename T>
struct SampleTerms {
  ag::Var<T> l_cls, l_p, l_a, total;
  ag::Var<T> features;
  ag::Var<T> recon;  // invalid when CDR is off
};

template <typename T>
struct SampleData {
  const Tensor<T>* image = nullptr;            // 3 x H x W in [0, 1]
  const std::vector<int>* labels = nullptr;    // binary, one per class
  const LabelRaster* superpixels = nullptr;    // H x W, required for ASM
};

// Alignment-resolution CAMs (one per present class) and their constant targets.
template <typename T>
struct AlignmentParts {
  std::vector<ag::Var<T>> cams;
  std::vector<Tensor<T>> targets;
};

template <typename T>
AlignmentParts<T> alignment_parts(ag::Var<T> features, const std::vector<int>& labels, const LabelRaster& superpixels,
                                  const ModulationConfig& cfg, bool ras,
                                  const std::vector<Tensor<T>>* frozen_targets) {
  const int div = cfg.resolution_divisor;
  const int ah = superpixels.height / div, aw = superpixels.width / div;
  const LabelRaster sp_small = downsample_labels(superpixels, div);
  auto up = nn::upsample_bilinear(features, ah, aw);
  AlignmentParts<T> parts;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (!labels[c]) continue;
    auto ch = ag::channel(up, static_cast<int>(c));
    auto cam = nn::normalize_cam(ch);
    if (frozen_targets) {
      parts.targets.push_back(frozen_targets->at(parts.cams.size()));
    } else {
      parts.targets.push_back(modulation_target(ch.value(), cam.value(), sp_small, cfg, ras));
    }
    parts.cams.push_back(cam);
  }
  return parts;
}

// Forward pass and every enabled loss for one sample. Disabled components are
// constant zeros. `frozen_targets` substitutes precomputed alignment targets
// (gradient checking holds them fixed); `targets_out` receives the ones used.
template <typename T>
SampleTerms<T> sample_losses(ag::Tape<T>& tape, Binder<T>& p, const ModelSpec& spec, const LossNetwork<T>* loss_net,
                             const SampleData<T>& data, const LossSwitches& sw,
                             const std::vector<Tensor<T>>* frozen_targets = nullptr,
                             std::vector<Tensor<T>>* targets_out = nullptr) {
  SampleTerms<T> out;
  auto image = tape.constant(*data.image);
  auto bb = forward_features(image, p, spec.backbone, spec.drs_enabled);
  out.features = bb.features;
  out.l_cls = classification_loss(classify(bb.features), *data.labels);
  const auto zero = [&] { return tape.constant(Tensor<T>::scalar(T(0))); };

  out.l_p = zero();
  if (sw.cdr) {
    if (!spec.decoder) throw ConfigError("CDR enabled but the model has no decoder");
    auto src = spec.cdr_early ? bb.stage_outs[static_cast<std::size_t>(spec.early_stage())] : bb.features;
    out.recon = reconstruct(src, p, *spec.decoder);
    if (sw.recon_loss == "perceptual") {
      if (!loss_net) throw ConfigError("perceptual loss needs a loss network");
      out.l_p = perceptual_loss(out.recon, ag::affine(image, T(2), T(-1)), *loss_net);
    } else {
      const auto kind = parse_pixel_loss(sw.recon_loss);
      out.l_p = pixel_loss(ag::affine(out.recon, T(0.5), T(0.5)), image, kind);
    }
  }

  out.l_a = zero();
  if (sw.asm_) {
    if (!data.superpixels) throw ConfigError("ASM enabled but no superpixels supplied");
    auto parts = alignment_parts(bb.features, *data.labels, *data.superpixels, sw.modulation, sw.ras, frozen_targets);
    out.l_a = alignment_loss(tape, parts.cams, parts.targets);
    if (targets_out) *targets_out = parts.targets;
  }
  out.total = ag::weighted_sum<T>({out.l_cls, out.l_p, out.l_a},
                                  {T(1), static_cast<T>(sw.beta_p), static_cast<T>(sw.beta_a)});
  return out;
}

}  // namespace ssc

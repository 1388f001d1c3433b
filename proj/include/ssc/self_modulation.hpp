#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "ssc/autograd.hpp"
#include "ssc/errors.hpp"
#include "ssc/nn.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

struct ModulationConfig {
  double t_obj = 0.3;
  int erosion_r = 8;
  // CAMs are aligned at 1/upsample_divisor of the image resolution.
  int resolution_divisor = 2;

  void validate() const {
    if (!(t_obj > 0 && t_obj < 1)) throw ArgumentError("t_obj must lie in (0, 1)");
    if (erosion_r < 1) throw ArgumentError("erosion kernel size must be >= 1");
    if (resolution_divisor < 1) throw ArgumentError("resolution divisor must be >= 1");
  }
};

using BinaryMask = Raster<std::uint8_t>;

// Binary erosion with an r x r square. The window spans offsets
// [-r/2, r - 1 - r/2] around each pixel (centred for odd r); pixels outside
// the raster count as 0.
inline BinaryMask erode(const BinaryMask& in, int r) {
  if (r < 1) throw ArgumentError("erode: kernel size must be >= 1");
  const int lo = -(r / 2), hi = r - 1 - r / 2;
  const int h = in.height, w = in.width;
  // Summed-area table over the mask.
  std::vector<int> sat(static_cast<std::size_t>(h + 1) * (w + 1), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      sat[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] = (in(y, x) ? 1 : 0) +
                                                               sat[static_cast<std::size_t>(y) * (w + 1) + x + 1] +
                                                               sat[static_cast<std::size_t>(y + 1) * (w + 1) + x] -
                                                               sat[static_cast<std::size_t>(y) * (w + 1) + x];
  BinaryMask out(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int y0 = y + lo, y1 = y + hi, x0 = x + lo, x1 = x + hi;
      if (y0 < 0 || x0 < 0 || y1 >= h || x1 >= w) continue;
      const int s = sat[static_cast<std::size_t>(y1 + 1) * (w + 1) + x1 + 1] - sat[static_cast<std::size_t>(y0) * (w + 1) + x1 + 1] -
                    sat[static_cast<std::size_t>(y1 + 1) * (w + 1) + x0] + sat[static_cast<std::size_t>(y0) * (w + 1) + x0];
      out(y, x) = s == r * r ? 1 : 0;
    }
  return out;
}

// M = erode(1[A >= T_obj], r). cam: 1 x h x w in [0, 1].
template <typename T>
BinaryMask reliable_mask(const Tensor<T>& cam, const ModulationConfig& cfg) {
  const int h = cam.dim(1), w = cam.dim(2);
  BinaryMask thr(h, w, 0);
  for (std::size_t i = 0; i < cam.size(); ++i) thr.data[i] = cam[i] >= static_cast<T>(cfg.t_obj) ? 1 : 0;
  return erode(thr, cfg.erosion_r);
}

template <typename T>
Tensor<T> regional_cam(const Tensor<T>& regional_features) {
  return nn::normalize_cam(regional_features);
}

// max(A_bar, A * M) elementwise.
template <typename T>
Tensor<T> apply_reliable_selection(const Tensor<T>& regional, const Tensor<T>& cam, const BinaryMask& mask) {
  regional.check_same(cam, "apply_reliable_selection");
  if (mask.size() != cam.size()) throw ArgumentError("apply_reliable_selection: mask size mismatch");
  Tensor<T> out = regional;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(regional[i], mask.data[i] ? cam[i] : T(0));
  return out;
}

// Alignment target for one class, treated as a constant by the loss.
// features_up: raw class channel at alignment resolution; cam: its normalised map.
template <typename T>
Tensor<T> modulation_target(const Tensor<T>& features_up, const Tensor<T>& cam, const LabelRaster& superpixels,
                            const ModulationConfig& cfg, bool reliable_selection) {
  Tensor<T> target = regional_cam(nn::regional_average(features_up, superpixels));
  if (!reliable_selection) return target;
  return apply_reliable_selection(target, cam, reliable_mask(cam, cfg));
}

// L_a = 1/(C' H' W') sum_c ||A^c - target^c||^2 over the C' present classes;
// zero when no class is present.
template <typename T>
ag::Var<T> alignment_loss(ag::Tape<T>& tape, const std::vector<ag::Var<T>>& cams, const std::vector<Tensor<T>>& targets) {
  if (cams.size() != targets.size()) throw ArgumentError("alignment_loss: cams/targets count mismatch");
  if (cams.empty()) return tape.constant(Tensor<T>::scalar(T(0)));
  std::vector<ag::Var<T>> terms;
  for (std::size_t c = 0; c < cams.size(); ++c) terms.push_back(ag::sum_sq_to(cams[c], targets[c]));
  const T n = static_cast<T>(cams.size() * cams.front().value().size());
  return ag::weighted_sum(terms, std::vector<T>(terms.size(), T(1) / n));
}

}  // namespace ssc

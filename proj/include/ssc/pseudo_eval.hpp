#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ssc/backbone.hpp"
#include "ssc/binary_io.hpp"
#include "ssc/dataset.hpp"
#include "ssc/errors.hpp"
#include "ssc/image.hpp"
#include "ssc/model.hpp"
#include "ssc/nn.hpp"

namespace ssc {

// Normalised activation map of one class; cls is 1-based.
struct ClassMap {
  int cls = 0;
  Tensor<float> map;  // 1 x H x W in [0, 1]
};

// CAMs of the present classes at image resolution. DRS follows the checkpoint.
inline std::vector<ClassMap> cams_for_image(const Model<float>& model, const Tensor<float>& image,
                                            const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != model.spec.backbone.num_classes) {
    throw ConfigError("checkpoint has " + std::to_string(model.spec.backbone.num_classes) +
                      " classes but the label vector has " + std::to_string(labels.size()));
  }
  ag::Tape<float> tape;
  auto& params = const_cast<ParamStore<float>&>(model.params);  // read-only binding
  Binder<float> binder(tape, params, false);
  auto bb = forward_features(tape.constant(image), binder, model.spec.backbone, model.spec.drs_enabled);
  const Tensor<float>& f = bb.features.value();
  const int h = f.dim(1), w = f.dim(2);
  std::vector<ClassMap> out;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (!labels[c]) continue;
    Tensor<float> ch(Shape{1, h, w});
    std::copy_n(f.data() + c * static_cast<std::size_t>(h) * w, static_cast<std::size_t>(h) * w, ch.data());
    out.push_back({static_cast<int>(c) + 1, nn::resize_bilinear(nn::normalize_cam(ch), image.dim(1), image.dim(2))});
  }
  return out;
}

// 0 where every map is below t_bg, otherwise the arg max (lowest class on ties).
inline Mask pseudo_mask(const std::vector<ClassMap>& cams, int height, int width, double t_bg = 0.25) {
  Mask m(height, width, 0);
  for (const auto& cm : cams)
    if (cm.map.dim(1) != height || cm.map.dim(2) != width) throw ArgumentError("pseudo_mask: map size mismatch");
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      float best = -1.0f;
      int label = 0;
      for (const auto& cm : cams) {
        const float v = cm.map.at(0, y, x);
        if (v > best || (v == best && cm.cls < label)) {
          best = v;
          label = cm.cls;
        }
      }
      m(y, x) = (label == 0 || best < static_cast<float>(t_bg)) ? 0 : static_cast<std::uint8_t>(label);
    }
  return m;
}

// Per-class intersection / union counts over classes 0..C. Ground-truth pixels
// equal to 255 are ignored (VOC boundary convention).
class IoUTable {
 public:
  explicit IoUTable(int num_classes = 0)
      : num_classes_(num_classes),
        inter_(static_cast<std::size_t>(num_classes) + 1, 0),
        uni_(static_cast<std::size_t>(num_classes) + 1, 0) {}

  static constexpr std::uint8_t kIgnore = 255;

  void add(const Mask& pred, const Mask& gt, const std::string& id) {
    if (pred.height != gt.height || pred.width != gt.width) {
      throw ArgumentError("mask shape mismatch for '" + id + "': " + std::to_string(pred.height) + "x" +
                          std::to_string(pred.width) + " vs " + std::to_string(gt.height) + "x" +
                          std::to_string(gt.width));
    }
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const int g = gt.data[i], p = pred.data[i];
      if (g == kIgnore) continue;
      if (g > num_classes_ || p > num_classes_) {
        throw ArgumentError("label out of range in '" + id + "': " + std::to_string(std::max(g, p)));
      }
      if (g == p) {
        ++inter_[static_cast<std::size_t>(g)];
        ++uni_[static_cast<std::size_t>(g)];
      } else {
        ++uni_[static_cast<std::size_t>(g)];
        ++uni_[static_cast<std::size_t>(p)];
      }
    }
  }

  void merge(const IoUTable& o) {
    if (o.num_classes_ != num_classes_) throw ArgumentError("IoUTable::merge: class count mismatch");
    for (std::size_t c = 0; c < inter_.size(); ++c) {
      inter_[c] += o.inter_[c];
      uni_[c] += o.uni_[c];
    }
  }

  int num_classes() const { return num_classes_; }
  std::uint64_t intersection(int c) const { return inter_.at(static_cast<std::size_t>(c)); }
  std::uint64_t union_(int c) const { return uni_.at(static_cast<std::size_t>(c)); }
  double iou(int c) const {
    const auto u = union_(c);
    return u == 0 ? 0.0 : static_cast<double>(intersection(c)) / static_cast<double>(u);
  }
  // Mean over classes (background included) with a nonempty union.
  double miou() const {
    double s = 0;
    int n = 0;
    for (int c = 0; c <= num_classes_; ++c) {
      if (union_(c) == 0) continue;
      s += iou(c);
      ++n;
    }
    return n == 0 ? 0.0 : s / n;
  }

  bool operator==(const IoUTable&) const = default;

 private:
  int num_classes_;
  std::vector<std::uint64_t> inter_, uni_;
};

inline std::vector<std::string> eval_class_names(const std::vector<std::string>& names, int num_classes) {
  std::vector<std::string> out{"background"};
  for (int c = 1; c <= num_classes; ++c)
    out.push_back(c - 1 < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(c - 1)] : "class" + std::to_string(c));
  return out;
}

inline std::string format_iou_table(const IoUTable& t, const std::vector<std::string>& names) {
  const auto labels = eval_class_names(names, t.num_classes());
  std::ostringstream os;
  os << std::left << std::setw(4) << "id" << std::setw(14) << "class" << std::right << std::setw(12) << "inter"
     << std::setw(12) << "union" << std::setw(9) << "IoU" << '\n';
  for (int c = 0; c <= t.num_classes(); ++c) {
    os << std::left << std::setw(4) << c << std::setw(14) << labels[static_cast<std::size_t>(c)] << std::right
       << std::setw(12) << t.intersection(c) << std::setw(12) << t.union_(c) << std::setw(9) << std::fixed
       << std::setprecision(4) << t.iou(c) << '\n';
  }
  os << std::left << std::setw(18) << "mIoU" << std::right << std::setw(33) << std::fixed << std::setprecision(4)
     << t.miou() << '\n';
  return os.str();
}

inline std::string format_iou_tsv(const IoUTable& t, const std::vector<std::string>& names) {
  const auto labels = eval_class_names(names, t.num_classes());
  std::ostringstream os;
  os << "id\tclass\tintersection\tunion\tiou\n" << std::setprecision(9);
  for (int c = 0; c <= t.num_classes(); ++c)
    os << c << '\t' << labels[static_cast<std::size_t>(c)] << '\t' << t.intersection(c) << '\t' << t.union_(c) << '\t'
       << t.iou(c) << '\n';
  os << "mIoU\t\t\t\t" << t.miou() << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// CAM export: "CAMF", u32 version, u32 C', u32 H, u32 W, C' u32 class
// indices, then C' * H * W float32.

inline constexpr std::uint32_t kCamFileVersion = 1;

inline void save_cams(const std::filesystem::path& path, const std::vector<ClassMap>& cams, int height, int width) {
  io::write_atomic(path, [&](std::ostream& os) {
    os.write("CAMF", 4);
    io::put_u32(os, kCamFileVersion);
    io::put_u32(os, static_cast<std::uint32_t>(cams.size()));
    io::put_u32(os, static_cast<std::uint32_t>(height));
    io::put_u32(os, static_cast<std::uint32_t>(width));
    for (const auto& c : cams) io::put_u32(os, static_cast<std::uint32_t>(c.cls));
    for (const auto& c : cams)
      for (float v : c.map) io::put_f32(os, v);
  });
}

inline std::vector<ClassMap> load_cams(const std::filesystem::path& path) {
  auto is = io::open_in(path);
  const auto where = path.string();
  io::expect_magic(is, "CAMF", where);
  if (io::read_u32(is, where) != kCamFileVersion) throw IoError(where + ": unsupported version");
  const auto n = io::read_u32(is, where);
  const auto h = static_cast<int>(io::read_u32(is, where));
  const auto w = static_cast<int>(io::read_u32(is, where));
  std::vector<ClassMap> cams(n);
  for (auto& c : cams) c.cls = static_cast<int>(io::read_u32(is, where));
  for (auto& c : cams) {
    c.map = Tensor<float>(Shape{1, h, w});
    for (auto& v : c.map) v = io::read_f32(is, where);
  }
  return cams;
}

// Grayscale activation blended 50% over the image.
inline Tensor<float> heatmap(const Tensor<float>& image, const Tensor<float>& cam) {
  if (cam.dim(1) != image.dim(1) || cam.dim(2) != image.dim(2)) throw ArgumentError("heatmap: size mismatch");
  Tensor<float> out = image;
  const std::size_t hw = static_cast<std::size_t>(image.dim(1)) * image.dim(2);
  for (int c = 0; c < image.dim(0); ++c)
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = 0.5f * image[c * hw + i] + 0.5f * cam[i];
  return out;
}

// Pseudo masks for every corpus image against its ground truth.
inline IoUTable evaluate_pseudo_masks(const Model<float>& model, const Corpus& corpus, double t_bg) {
  IoUTable table(corpus.num_classes());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto s = corpus.load(i);
    if (!s.mask) throw IoError("no ground-truth mask for '" + s.image.id + "'");
    const auto cams = cams_for_image(model, s.image.pixels, s.labels.y);
    table.add(pseudo_mask(cams, s.image.height(), s.image.width(), t_bg), *s.mask, s.image.id);
  }
  return table;
}

}  // namespace ssc

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ssc/errors.hpp"
#include "ssc/image.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

namespace fs = std::filesystem;

// Portable draws from a 64-bit engine (std distributions are not
// bit-reproducible across standard libraries).
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }
inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

inline const std::array<const char*, 8> kShapeNames = {"disk", "square", "triangle", "ring",
                                                       "cross", "bar",    "ell",      "diamond"};

inline void check_image_geometry(int h, int w) {
  if (h < 32 || w < 32 || h % 16 != 0 || w % 16 != 0) {
    throw ArgumentError("image size " + std::to_string(h) + "x" + std::to_string(w) +
                        " must be >= 32 and divisible by 16");
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpus.

struct SyntheticSpec {
  int n_images = 100;
  int n_classes = 3;
  int image_size = 64;
  std::uint64_t seed = 0;
};

namespace detail {

// Shape archetype membership in box coordinates u, v in [-1, 1] (v downward).
inline bool in_shape(int archetype, double u, double v, bool alt) {
  const double au = std::abs(u), av = std::abs(v);
  switch (archetype) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return std::max(au, av) <= 0.85;
    case 2: return v <= 0.8 && v >= -0.9 && au <= 0.95 * (v + 0.9) / 1.7;
    case 3: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    }
    case 4: return std::max(au, av) <= 0.95 && (au <= 0.3 || av <= 0.3);
    case 5: return alt ? (av <= 0.95 && au <= 0.3) : (au <= 0.95 && av <= 0.3);
    case 6: return std::max(au, av) <= 0.9 && (u <= -0.35 || v >= 0.35);
    case 7: return au + av <= 1.0;
    default: return false;
  }
}

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Smooth lattice noise in [-1, 1].
inline std::vector<double> value_noise(std::mt19937_64& rng, int size, int cell) {
  const int n = size / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(n) * n);
  for (auto& v : lattice) v = uniform(rng, -1.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(size) * size);
  auto smooth = [](double t) { return t * t * (3 - 2 * t); };
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double gy = static_cast<double>(y) / cell, gx = static_cast<double>(x) / cell;
      const int y0 = static_cast<int>(gy), x0 = static_cast<int>(gx);
      const double fy = smooth(gy - y0), fx = smooth(gx - x0);
      auto at = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy) * n + xx]; };
      const double top = at(y0, x0) * (1 - fx) + at(y0, x0 + 1) * fx;
      const double bot = at(y0 + 1, x0) * (1 - fx) + at(y0 + 1, x0 + 1) * fx;
      out[static_cast<std::size_t>(y) * size + x] = top * (1 - fy) + bot * fy;
    }
  return out;
}

inline std::vector<std::vector<int>> plan_labels(const SyntheticSpec& spec, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<std::vector<int>> plan(static_cast<std::size_t>(spec.n_images));
    std::vector<int> freq(static_cast<std::size_t>(spec.n_classes), 0);
    for (auto& shapes : plan) {
      const int k = uniform_int(rng, 1, 3);
      std::vector<bool> seen(static_cast<std::size_t>(spec.n_classes), false);
      for (int i = 0; i < k; ++i) {
        const int c = uniform_int(rng, 0, spec.n_classes - 1);
        shapes.push_back(c);
        if (!seen[static_cast<std::size_t>(c)]) ++freq[static_cast<std::size_t>(c)];
        seen[static_cast<std::size_t>(c)] = true;
      }
    }
    // Small corpora are exempt from the balance requirement.
    if (spec.n_images < 20) return plan;
    bool ok = true;
    for (int f : freq) {
      const double r = static_cast<double>(f) / spec.n_images;
      ok = ok && r >= 0.2 && r <= 0.8;
    }
    if (ok) return plan;
  }
  throw ArgumentError("could not draw a class-balanced label plan");
}

struct Rendered {
  Tensor<float> pixels;
  Mask mask;
};

inline Rendered render_image(const std::vector<int>& shape_classes, int size, std::mt19937_64& rng) {
  const int area = size * size;
  const double scale = size / 64.0;
  for (;;) {
    Mask mask(size, size, 0);
    std::vector<std::uint8_t> blocked(static_cast<std::size_t>(area), 0);
    bool placed_all = true;
    for (int cls : shape_classes) {
      bool placed = false;
      for (int attempt = 0; attempt < 300 && !placed; ++attempt) {
        const int side = uniform_int(rng, static_cast<int>(10 * scale), std::min(size - 2, static_cast<int>(46 * scale)));
        const int top = uniform_int(rng, 1, size - side - 1);
        const int left = uniform_int(rng, 1, size - side - 1);
        const bool alt = uniform01(rng) < 0.5;
        std::vector<int> pix;
        bool clash = false;
        for (int y = top; y < top + side && !clash; ++y)
          for (int x = left; x < left + side; ++x) {
            const double u = (x + 0.5 - left - side / 2.0) / (side / 2.0);
            const double v = (y + 0.5 - top - side / 2.0) / (side / 2.0);
            if (!detail::in_shape(cls, u, v, alt)) continue;
            if (blocked[static_cast<std::size_t>(y) * size + x]) {
              clash = true;
              break;
            }
            pix.push_back(y * size + x);
          }
        const double frac = static_cast<double>(pix.size()) / area;
        if (clash || frac < 0.04 || frac > 0.25) continue;
        for (int p : pix) {
          mask.data[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(cls + 1);
          // One-pixel moat keeps shapes from touching.
          const int py = p / size, px = p % size;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = py + dy, xx = px + dx;
              if (yy >= 0 && yy < size && xx >= 0 && xx < size) blocked[static_cast<std::size_t>(yy) * size + xx] = 1;
            }
        }
        placed = true;
      }
      if (!placed) {
        placed_all = false;
        break;
      }
    }
    if (!placed_all) continue;

    // Background: tinted gray plus low-amplitude value noise (|noise| <= 0.15).
    const double base = uniform(rng, 0.25, 0.55);
    std::array<double, 3> tint{};
    for (auto& t : tint) t = uniform(rng, -0.05, 0.05);
    const auto noise = value_noise(rng, size, std::max(4, size / 8));
    std::array<std::array<double, 3>, 8> colors{};
    for (int c = 0; c < 8; ++c)
      colors[static_cast<std::size_t>(c)] = hsv_to_rgb(c * 0.125 + uniform(rng, -0.03, 0.03), uniform(rng, 0.6, 0.9),
                                                       uniform(rng, 0.7, 0.95));
    Tensor<float> px(Shape{3, size, size});
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * size + x;
        const int label = mask.data[i];
        for (int ch = 0; ch < 3; ++ch) {
          double v;
          if (label == 0) {
            v = base + tint[static_cast<std::size_t>(ch)] + 0.12 * noise[i] + uniform(rng, -0.03, 0.03);
          } else {
            v = colors[static_cast<std::size_t>(label - 1)][static_cast<std::size_t>(ch)] + uniform(rng, -0.03, 0.03);
          }
          // Quantise so the PNG round trip is exact.
          px.at(ch, y, x) = to_byte(static_cast<float>(v)) / 255.0f;
        }
      }
    return Rendered{std::move(px), std::move(mask)};
  }
}

}  // namespace detail

inline std::string image_id(int i) {
  std::ostringstream os;
  os << "img" << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

inline void generate_synthetic_corpus(const fs::path& out, const SyntheticSpec& spec) {
  if (spec.n_classes < 2 || spec.n_classes > 8) {
    throw ArgumentError("n_classes must be in [2, 8], got " + std::to_string(spec.n_classes));
  }
  if (spec.n_images < 1) throw ArgumentError("n_images must be >= 1");
  check_image_geometry(spec.image_size, spec.image_size);
  std::error_code ec;
  fs::create_directories(out / "images", ec);
  fs::create_directories(out / "masks", ec);
  if (ec || !fs::is_directory(out / "images")) throw IoError("cannot create corpus directory " + out.string());

  std::mt19937_64 plan_rng(spec.seed);
  std::mt19937_64 render_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto plan = detail::plan_labels(spec, plan_rng);

  std::ofstream labels(out / "labels.txt", std::ios::trunc);
  if (!labels) throw IoError("cannot write " + (out / "labels.txt").string());
  labels << "classes " << spec.n_classes;
  for (int c = 0; c < spec.n_classes; ++c) labels << ' ' << kShapeNames[static_cast<std::size_t>(c)];
  labels << '\n';
  for (int i = 0; i < spec.n_images; ++i) {
    const auto& shapes = plan[static_cast<std::size_t>(i)];
    auto r = detail::render_image(shapes, spec.image_size, render_rng);
    const std::string id = image_id(i);
    save_image(out / "images" / (id + ".png"), r.pixels);
    save_mask(out / "masks" / (id + ".png"), r.mask);
    std::vector<int> present;
    for (int c : shapes) present.push_back(c + 1);
    std::sort(present.begin(), present.end());
    present.erase(std::unique(present.begin(), present.end()), present.end());
    labels << id << ' ';
    for (std::size_t k = 0; k < present.size(); ++k) labels << (k ? "," : "") << present[k];
    labels << '\n';
  }
  if (!labels) throw IoError("write failed: " + (out / "labels.txt").string());
}

// ---------------------------------------------------------------------------
// Corpus loading.

struct Sample {
  Image image;
  LabelVector labels;
  std::optional<Mask> mask;
};

// Lazy view over a corpus directory: labels.txt is parsed eagerly, pixels are
// decoded on access.
class Corpus {
 public:
  struct Entry {
    std::string id;
    LabelVector labels;
  };

  static Corpus open(const fs::path& root) {
    Corpus c;
    c.root_ = root;
    const auto path = root / "labels.txt";
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::string line;
    int line_no = 0;
    int num_classes = -1;
    while (std::getline(is, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      std::istringstream ls(line);
      if (num_classes < 0) {
        std::string kw;
        ls >> kw >> num_classes;
        if (kw != "classes" || !ls || num_classes < 1) {
          throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 'classes <C> <names...>'");
        }
        std::string name;
        while (ls >> name) c.class_names_.push_back(name);
        if (static_cast<int>(c.class_names_.size()) != num_classes) {
          throw ParseError(path.string() + ":" + std::to_string(line_no) + ": class name count does not match C");
        }
        continue;
      }
      std::string id, list, extra;
      ls >> id >> list;
      if (id.empty() || list.empty() || (ls >> extra)) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected '<id> <c1>,<c2>,...'");
      }
      Entry e{id, LabelVector{std::vector<int>(static_cast<std::size_t>(num_classes), 0)}};
      std::istringstream cs(list);
      std::string tok;
      while (std::getline(cs, tok, ',')) {
        int cls = 0;
        std::size_t used = 0;
        try {
          cls = std::stoi(tok, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != tok.size() || tok.empty() || cls < 1 || cls > num_classes) {
          throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad class index '" + tok + "'");
        }
        e.labels.y[static_cast<std::size_t>(cls - 1)] = 1;
      }
      c.entries_.push_back(std::move(e));
    }
    if (num_classes < 0) throw ParseError(path.string() + ": missing 'classes' header");
    return c;
  }

  const fs::path& root() const { return root_; }
  int num_classes() const { return static_cast<int>(class_names_.size()); }
  const std::vector<std::string>& class_names() const { return class_names_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  bool has_masks() const { return fs::is_directory(root_ / "masks"); }

  Sample load(std::size_t i) const {
    const auto& e = entries_.at(i);
    const auto img_path = root_ / "images" / (e.id + ".png");
    if (!fs::exists(img_path)) throw IoError("missing image for id '" + e.id + "': " + img_path.string());
    Sample s{Image{e.id, load_image(img_path)}, e.labels, std::nullopt};
    const auto mask_path = root_ / "masks" / (e.id + ".png");
    if (fs::exists(mask_path)) s.mask = load_mask(mask_path);
    return s;
  }

  class Iterator {
   public:
    using iterator_category = std::input_iterator_tag;
    using value_type = Sample;
    using difference_type = std::ptrdiff_t;
    using pointer = void;
    using reference = Sample;
    Iterator(const Corpus* c, std::size_t i) : c_(c), i_(i) {}
    Sample operator*() const { return c_->load(i_); }
    Iterator& operator++() {
      ++i_;
      return *this;
    }
    bool operator==(const Iterator& o) const { return i_ == o.i_; }

   private:
    const Corpus* c_;
    std::size_t i_;
  };

  Iterator begin() const { return Iterator(this, 0); }
  Iterator end() const { return Iterator(this, entries_.size()); }

 private:
  fs::path root_;
  std::vector<std::string> class_names_;
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Augmentation: horizontal flip, isotropic rescale, crop or edge-pad back to
// the training size.

struct AugmentDraw {
  bool flip = false;
  double scale = 1.0;
  int offset_y = 0;  // crop offset when the scaled image is larger, paste offset when smaller
  int offset_x = 0;
};

inline AugmentDraw draw_augment(std::mt19937_64& rng, int in_h, int in_w, int out_size) {
  AugmentDraw d;
  d.flip = uniform01(rng) < 0.5;
  d.scale = uniform(rng, 0.75, 1.25);
  const int sh = static_cast<int>(std::lround(in_h * d.scale));
  const int sw = static_cast<int>(std::lround(in_w * d.scale));
  d.offset_y = uniform_int(rng, 0, std::abs(sh - out_size));
  d.offset_x = uniform_int(rng, 0, std::abs(sw - out_size));
  return d;
}

namespace detail {

// Maps output coordinate o to a (continuous) source coordinate along one axis.
inline double augment_source(int o, int in, int scaled, int out, int offset) {
  int s = scaled >= out ? o + offset : o - offset;
  s = std::clamp(s, 0, scaled - 1);
  return (s + 0.5) * static_cast<double>(in) / scaled - 0.5;
}

}  // namespace detail

inline Tensor<float> apply_augment(const Tensor<float>& img, const AugmentDraw& d, int out_size) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int sh = static_cast<int>(std::lround(h * d.scale));
  const int sw = static_cast<int>(std::lround(w * d.scale));
  Tensor<float> out(Shape{c, out_size, out_size});
  for (int y = 0; y < out_size; ++y) {
    double sy = std::clamp(detail::augment_source(y, h, sh, out_size, d.offset_y), 0.0, h - 1.0);
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < out_size; ++x) {
      double sx = std::clamp(detail::augment_source(x, w, sw, out_size, d.offset_x), 0.0, w - 1.0);
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      auto src_x = [&](int xx) { return d.flip ? w - 1 - xx : xx; };
      for (int ch = 0; ch < c; ++ch) {
        const double v = (img.at(ch, y0, src_x(x0)) * (1 - fx) + img.at(ch, y0, src_x(x1)) * fx) * (1 - fy) +
                         (img.at(ch, y1, src_x(x0)) * (1 - fx) + img.at(ch, y1, src_x(x1)) * fx) * fy;
        out.at(ch, y, x) = static_cast<float>(v);
      }
    }
  }
  return out;
}

// Same geometry for label rasters, nearest-neighbour sampling.
inline LabelRaster apply_augment(const LabelRaster& labels, const AugmentDraw& d, int out_size) {
  const int h = labels.height, w = labels.width;
  const int sh = static_cast<int>(std::lround(h * d.scale));
  const int sw = static_cast<int>(std::lround(w * d.scale));
  LabelRaster out(out_size, out_size);
  for (int y = 0; y < out_size; ++y) {
    const int sy = std::clamp(static_cast<int>(std::lround(detail::augment_source(y, h, sh, out_size, d.offset_y))), 0, h - 1);
    for (int x = 0; x < out_size; ++x) {
      int sx = std::clamp(static_cast<int>(std::lround(detail::augment_source(x, w, sw, out_size, d.offset_x))), 0, w - 1);
      if (d.flip) sx = w - 1 - sx;
      out(y, x) = labels(sy, sx);
    }
  }
  return out;
}

inline Image augment(const Image& image, std::mt19937_64& rng, int out_size) {
  const auto d = draw_augment(rng, image.height(), image.width(), out_size);
  return Image{image.id, apply_augment(image.pixels, d, out_size)};
}

}  // namespace ssc

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ssc/binary_io.hpp"
#include "ssc/errors.hpp"
#include "ssc/image.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

struct SuperpixelMap {
  LabelRaster labels;
  int num_regions = 0;

  int height() const { return labels.height; }
  int width() const { return labels.width; }
  bool operator==(const SuperpixelMap&) const = default;
};

struct SuperpixelParams {
  double k = 100.0;
  int min_size = 16;
  double sigma = 0.8;
  int budget = 64;

  // Classic (k = 100 at 512 x 512) scaled by image area.
  static SuperpixelParams defaults_for(int height, int width) {
    SuperpixelParams p;
    p.k = 100.0 * (static_cast<double>(height) * width) / (512.0 * 512.0);
    return p;
  }
};

// Union-find over pixel indices with union by rank and path compression.
class DisjointSets {
 public:
  explicit DisjointSets(int n) : parent_(static_cast<std::size_t>(n)), rank_(static_cast<std::size_t>(n), 0),
                                 size_(static_cast<std::size_t>(n), 1) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  int find(int x) {
    int r = x;
    while (parent_[static_cast<std::size_t>(r)] != r) r = parent_[static_cast<std::size_t>(r)];
    while (parent_[static_cast<std::size_t>(x)] != r) {
      const int next = parent_[static_cast<std::size_t>(x)];
      parent_[static_cast<std::size_t>(x)] = r;
      x = next;
    }
    return r;
  }
  int join(int a, int b) {
    auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
    if (rank_[ua] < rank_[ub]) std::swap(ua, ub);
    parent_[ub] = static_cast<int>(ua);
    size_[ua] += size_[ub];
    if (rank_[ua] == rank_[ub]) ++rank_[ua];
    return static_cast<int>(ua);
  }
  int size(int root) const { return size_[static_cast<std::size_t>(root)]; }

 private:
  std::vector<int> parent_, rank_, size_;
};

namespace sp_detail {

struct Edge {
  int a, b;
  double w;
};

// Separable Gaussian with clamped borders; returns 3 x H x W on the 0..255 scale.
inline std::vector<double> smooth(const Tensor<float>& img, double sigma) {
  const int h = img.dim(1), w = img.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> src(3 * plane);
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = 255.0 * img[i];
  if (sigma <= 0) return src;
  const int len = static_cast<int>(std::ceil(sigma * 4.0)) + 1;
  std::vector<double> mask(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) mask[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i / sigma) * (i / sigma));
  double sum = 0;
  for (int i = 1; i < len; ++i) sum += 2 * mask[static_cast<std::size_t>(i)];
  sum += mask[0];
  for (auto& m : mask) m /= sum;
  std::vector<double> tmp(3 * plane);
  for (int c = 0; c < 3; ++c) {
    const double* s = src.data() + c * plane;
    double* t = tmp.data() + c * plane;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = mask[0] * s[y * w + x];
        for (int i = 1; i < len; ++i)
          acc += mask[static_cast<std::size_t>(i)] * (s[y * w + std::max(x - i, 0)] + s[y * w + std::min(x + i, w - 1)]);
        t[y * w + x] = acc;
      }
    double* d = src.data() + c * plane;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = mask[0] * t[y * w + x];
        for (int i = 1; i < len; ++i)
          acc += mask[static_cast<std::size_t>(i)] * (t[std::max(y - i, 0) * w + x] + t[std::min(y + i, h - 1) * w + x]);
        d[y * w + x] = acc;
      }
  }
  return src;
}

// 8-connected grid edges, each undirected pair once, in raster construction
// order (right, down, down-right, up-right), stably sorted by weight.
inline std::vector<Edge> grid_edges(const std::vector<double>& px, int h, int w) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto diff = [&](int a, int b) {
    double s = 0;
    for (int c = 0; c < 3; ++c) {
      const double d = px[c * plane + static_cast<std::size_t>(a)] - px[c * plane + static_cast<std::size_t>(b)];
      s += d * d;
    }
    return std::sqrt(s);
  };
  std::vector<Edge> edges;
  edges.reserve(plane * 4);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      if (x < w - 1) edges.push_back({i, i + 1, diff(i, i + 1)});
      if (y < h - 1) edges.push_back({i, i + w, diff(i, i + w)});
      if (x < w - 1 && y < h - 1) edges.push_back({i, i + w + 1, diff(i, i + w + 1)});
      if (x < w - 1 && y > 0) edges.push_back({i, i - w + 1, diff(i, i - w + 1)});
    }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& l, const Edge& r) { return l.w < r.w; });
  return edges;
}

// Dense labels in order of first appearance in raster scan.
inline SuperpixelMap canonical(const std::vector<int>& roots, int h, int w) {
  SuperpixelMap sp{LabelRaster(h, w), 0};
  std::map<int, int> ids;
  for (std::size_t i = 0; i < roots.size(); ++i) {
    auto [it, inserted] = ids.emplace(roots[i], sp.num_regions);
    if (inserted) ++sp.num_regions;
    sp.labels.data[i] = it->second;
  }
  return sp;
}

}  // namespace sp_detail

// Graph-based segmentation on the 8-connected pixel grid. Edge weight is the
// Euclidean RGB distance (0..255 scale) after Gaussian smoothing; components
// C1, C2 merge when w <= min(Int(C1) + k/|C1|, Int(C2) + k/|C2|). A final
// pass, again in sorted edge order, absorbs components below min_size.
inline SuperpixelMap felzenszwalb_segment(const Tensor<float>& image, double k, int min_size, double sigma) {
  if (!(k > 0) || min_size < 1 || sigma < 0) throw ArgumentError("felzenszwalb_segment: need k > 0, min_size >= 1, sigma >= 0");
  const int h = image.dim(1), w = image.dim(2);
  const auto px = sp_detail::smooth(image, sigma);
  const auto edges = sp_detail::grid_edges(px, h, w);
  DisjointSets u(h * w);
  std::vector<double> threshold(static_cast<std::size_t>(h) * w, k);
  for (const auto& e : edges) {
    int a = u.find(e.a), b = u.find(e.b);
    if (a == b) continue;
    if (e.w <= threshold[static_cast<std::size_t>(a)] && e.w <= threshold[static_cast<std::size_t>(b)]) {
      const int r = u.join(a, b);
      threshold[static_cast<std::size_t>(r)] = e.w + k / u.size(r);
    }
  }
  for (const auto& e : edges) {
    int a = u.find(e.a), b = u.find(e.b);
    if (a != b && (u.size(a) < min_size || u.size(b) < min_size)) u.join(a, b);
  }
  std::vector<int> roots(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h * w; ++i) roots[static_cast<std::size_t>(i)] = u.find(i);
  return sp_detail::canonical(roots, h, w);
}

// Splits every region into its 4-connected components.
inline SuperpixelMap split_4connected(const SuperpixelMap& sp) {
  const int h = sp.height(), w = sp.width();
  SuperpixelMap out{LabelRaster(h, w, -1), 0};
  std::vector<int> stack;
  for (int i = 0; i < h * w; ++i) {
    if (out.labels.data[static_cast<std::size_t>(i)] >= 0) continue;
    const int id = out.num_regions++;
    const int src = sp.labels.data[static_cast<std::size_t>(i)];
    out.labels.data[static_cast<std::size_t>(i)] = id;
    stack.push_back(i);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int y = p / w, x = p % w;
      const std::array<std::pair<int, int>, 4> nb{{{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}}};
      for (auto [yy, xx] : nb) {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const int q = yy * w + xx;
        if (out.labels.data[static_cast<std::size_t>(q)] < 0 && sp.labels.data[static_cast<std::size_t>(q)] == src) {
          out.labels.data[static_cast<std::size_t>(q)] = id;
          stack.push_back(q);
        }
      }
    }
  }
  return out;
}

namespace sp_detail {

inline constexpr int kBins = 25;

struct Region {
  int size = 0;
  std::array<int, 3 * kBins> hist{};
  std::set<int> neighbours;
  bool alive = true;
};

inline double similarity(const Region& a, const Region& b, double total) {
  double inter = 0;
  const double na = 3.0 * a.size, nb = 3.0 * b.size;
  for (std::size_t i = 0; i < a.hist.size(); ++i) inter += std::min(a.hist[i] / na, b.hist[i] / nb);
  return 0.5 * inter + 0.5 * (1.0 - (a.size + b.size) / total);
}

}  // namespace sp_detail

// Hierarchical grouping until at most `budget` regions remain. Similarity of
// adjacent regions = 0.5 * colour-histogram intersection (25 bins per
// channel, L1-normalised) + 0.5 * (1 - combined size / image size). Ties go to
// the smaller combined area, then the lower (id, id) pair; the merged region
// keeps the lower id. Labels are re-compacted preserving id order.
inline SuperpixelMap merge_to_budget(const SuperpixelMap& sp, const Tensor<float>& image, int budget = 64) {
  if (budget < 1) throw ArgumentError("merge_to_budget: budget must be >= 1");
  if (sp.num_regions <= budget) return sp;
  const int h = sp.height(), w = sp.width();
  if (image.dim(1) != h || image.dim(2) != w) throw ArgumentError("merge_to_budget: image/superpixel size mismatch");
  using sp_detail::kBins;
  std::vector<sp_detail::Region> regions(static_cast<std::size_t>(sp.num_regions));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto& r = regions[static_cast<std::size_t>(sp.labels(y, x))];
      ++r.size;
      for (int c = 0; c < 3; ++c) {
        const int bin = std::min(kBins - 1, static_cast<int>(image.at(c, y, x) * kBins));
        ++r.hist[static_cast<std::size_t>(c * kBins + std::max(bin, 0))];
      }
      const int me = sp.labels(y, x);
      if (x + 1 < w && sp.labels(y, x + 1) != me) {
        r.neighbours.insert(sp.labels(y, x + 1));
        regions[static_cast<std::size_t>(sp.labels(y, x + 1))].neighbours.insert(me);
      }
      if (y + 1 < h && sp.labels(y + 1, x) != me) {
        r.neighbours.insert(sp.labels(y + 1, x));
        regions[static_cast<std::size_t>(sp.labels(y + 1, x))].neighbours.insert(me);
      }
    }
  const double total = static_cast<double>(h) * w;
  std::map<std::pair<int, int>, double> sim;
  for (int a = 0; a < sp.num_regions; ++a)
    for (int b : regions[static_cast<std::size_t>(a)].neighbours)
      if (a < b) sim[{a, b}] = sp_detail::similarity(regions[static_cast<std::size_t>(a)], regions[static_cast<std::size_t>(b)], total);

  std::vector<int> remap(static_cast<std::size_t>(sp.num_regions));
  std::iota(remap.begin(), remap.end(), 0);
  int alive = sp.num_regions;
  while (alive > budget && !sim.empty()) {
    auto best = sim.begin();
    int best_area = regions[static_cast<std::size_t>(best->first.first)].size + regions[static_cast<std::size_t>(best->first.second)].size;
    for (auto it = std::next(sim.begin()); it != sim.end(); ++it) {
      const int area = regions[static_cast<std::size_t>(it->first.first)].size + regions[static_cast<std::size_t>(it->first.second)].size;
      // Map order already sorts by (lo, hi) id, so strict comparisons keep the lowest pair on ties.
      if (it->second > best->second || (it->second == best->second && area < best_area)) {
        best = it;
        best_area = area;
      }
    }
    const auto [keep, gone] = best->first;
    auto& rk = regions[static_cast<std::size_t>(keep)];
    auto& rg = regions[static_cast<std::size_t>(gone)];
    for (int n : rk.neighbours) sim.erase({std::min(keep, n), std::max(keep, n)});
    for (int n : rg.neighbours) sim.erase({std::min(gone, n), std::max(gone, n)});
    rk.size += rg.size;
    for (std::size_t i = 0; i < rk.hist.size(); ++i) rk.hist[i] += rg.hist[i];
    for (int n : rg.neighbours) {
      auto& rn = regions[static_cast<std::size_t>(n)];
      rn.neighbours.erase(gone);
      if (n != keep) {
        rn.neighbours.insert(keep);
        rk.neighbours.insert(n);
      }
    }
    rk.neighbours.erase(gone);
    rk.neighbours.erase(keep);
    rg.alive = false;
    rg.neighbours.clear();
    for (int n : rk.neighbours)
      sim[{std::min(keep, n), std::max(keep, n)}] = sp_detail::similarity(rk, regions[static_cast<std::size_t>(n)], total);
    for (auto& r : remap)
      if (r == gone) r = keep;
    --alive;
  }
  std::vector<int> compact(static_cast<std::size_t>(sp.num_regions), -1);
  SuperpixelMap out{LabelRaster(h, w), 0};
  for (int id = 0; id < sp.num_regions; ++id)
    if (regions[static_cast<std::size_t>(id)].alive) compact[static_cast<std::size_t>(id)] = out.num_regions++;
  for (std::size_t i = 0; i < out.labels.size(); ++i)
    out.labels.data[i] = compact[static_cast<std::size_t>(remap[static_cast<std::size_t>(sp.labels.data[i])])];
  return out;
}

// Full pipeline used for training caches.
inline SuperpixelMap compute_superpixels(const Tensor<float>& image, const SuperpixelParams& p) {
  auto sp = felzenszwalb_segment(image, p.k, p.min_size, p.sigma);
  sp = split_4connected(sp);
  return merge_to_budget(sp, image, p.budget);
}

struct RegionIndex {
  std::vector<int> sizes;
  std::vector<std::vector<int>> pixels;  // flat raster indices per region
  const LabelRaster* labels = nullptr;

  int region_of(int y, int x) const { return (*labels)(y, x); }
};

inline RegionIndex region_index(const SuperpixelMap& sp) {
  RegionIndex idx;
  idx.sizes.assign(static_cast<std::size_t>(sp.num_regions), 0);
  idx.pixels.resize(static_cast<std::size_t>(sp.num_regions));
  idx.labels = &sp.labels;
  for (std::size_t i = 0; i < sp.labels.size(); ++i) {
    const auto r = static_cast<std::size_t>(sp.labels.data[i]);
    ++idx.sizes[r];
    idx.pixels[r].push_back(static_cast<int>(i));
  }
  return idx;
}

// Partition check: ids in [0, K), every id used, and optionally every region
// 4-connected.
inline bool is_valid_partition(const SuperpixelMap& sp, bool require_4connected) {
  if (sp.labels.size() != static_cast<std::size_t>(sp.height()) * sp.width() || sp.num_regions < 1) return false;
  std::vector<int> count(static_cast<std::size_t>(sp.num_regions), 0);
  for (int v : sp.labels.data) {
    if (v < 0 || v >= sp.num_regions) return false;
    ++count[static_cast<std::size_t>(v)];
  }
  for (int c : count)
    if (c == 0) return false;
  if (require_4connected) return split_4connected(sp).num_regions == sp.num_regions;
  return true;
}

// Nearest-neighbour downsample by an integer factor (takes the top-left sample).
inline LabelRaster downsample_labels(const LabelRaster& labels, int factor) {
  LabelRaster out(labels.height / factor, labels.width / factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out(y, x) = labels(y * factor, x * factor);
  return out;
}

// ---------------------------------------------------------------------------
// Cache file: "SSCS", u32 version, u32 H, u32 W, u32 K, H*W u16 labels.

inline constexpr std::uint32_t kSuperpixelCacheVersion = 1;

inline std::filesystem::path superpixel_cache_path(const std::filesystem::path& corpus_root, const std::string& id) {
  return corpus_root / "superpixels" / (id + ".sscs");
}

inline void save_superpixels(const std::filesystem::path& path, const SuperpixelMap& sp) {
  io::write_atomic(path, [&](std::ostream& os) {
    os.write("SSCS", 4);
    io::put_u32(os, kSuperpixelCacheVersion);
    io::put_u32(os, static_cast<std::uint32_t>(sp.height()));
    io::put_u32(os, static_cast<std::uint32_t>(sp.width()));
    io::put_u32(os, static_cast<std::uint32_t>(sp.num_regions));
    for (int v : sp.labels.data) io::put_u16(os, static_cast<std::uint16_t>(v));
  });
}

inline SuperpixelMap load_superpixels(const std::filesystem::path& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, "SSCS", path.string());
  const auto version = io::read_u32(is, path.string());
  if (version != kSuperpixelCacheVersion) throw IoError(path.string() + ": unsupported version");
  const auto h = static_cast<int>(io::read_u32(is, path.string()));
  const auto w = static_cast<int>(io::read_u32(is, path.string()));
  SuperpixelMap sp{LabelRaster(h, w), static_cast<int>(io::read_u32(is, path.string()))};
  for (auto& v : sp.labels.data) v = io::read_u16(is, path.string());
  if (!is_valid_partition(sp, false)) throw IoError(path.string() + ": corrupt superpixel labels");
  return sp;
}

// Image with region boundaries painted red.
inline Tensor<float> render_boundaries(const Tensor<float>& image, const SuperpixelMap& sp) {
  Tensor<float> out = image;
  for (int y = 0; y < sp.height(); ++y)
    for (int x = 0; x < sp.width(); ++x) {
      const int me = sp.labels(y, x);
      const bool edge = (x + 1 < sp.width() && sp.labels(y, x + 1) != me) ||
                        (y + 1 < sp.height() && sp.labels(y + 1, x) != me);
      if (!edge) continue;
      out.at(0, y, x) = 1.0f;
      out.at(1, y, x) = 0.0f;
      out.at(2, y, x) = 0.0f;
    }
  return out;
}

}  // namespace ssc

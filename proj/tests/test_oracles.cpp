// Exhaustive comparisons against deliberately naive reference implementations.
#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "ssc/self_modulation.hpp"
#include "ssc/superpixel.hpp"

namespace ssc {
namespace {

// Felzenszwalb reference: flat component labels relabelled on every merge,
// edges sorted by an insertion sort, no smoothing (sigma = 0).
std::vector<int> reference_segment(const Tensor<float>& img, double k, int min_size) {
  const int h = img.dim(1), w = img.dim(2), n = h * w;
  struct E {
    int a, b;
    double w;
  };
  auto px = [&](int c, int i) { return 255.0 * img[static_cast<std::size_t>(c * n + i)]; };
  auto dist = [&](int a, int b) {
    double s = 0;
    for (int c = 0; c < 3; ++c) s += (px(c, a) - px(c, b)) * (px(c, a) - px(c, b));
    return std::sqrt(s);
  };
  std::vector<E> edges;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      if (x < w - 1) edges.push_back({i, i + 1, dist(i, i + 1)});
      if (y < h - 1) edges.push_back({i, i + w, dist(i, i + w)});
      if (x < w - 1 && y < h - 1) edges.push_back({i, i + w + 1, dist(i, i + w + 1)});
      if (x < w - 1 && y > 0) edges.push_back({i, i - w + 1, dist(i, i - w + 1)});
    }
  for (std::size_t i = 1; i < edges.size(); ++i)
    for (std::size_t j = i; j > 0 && edges[j].w < edges[j - 1].w; --j) std::swap(edges[j], edges[j - 1]);

  std::vector<int> comp(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) comp[static_cast<std::size_t>(i)] = i;
  std::vector<double> internal(static_cast<std::size_t>(n), 0.0);
  auto size_of = [&](int c) {
    int s = 0;
    for (int v : comp) s += v == c;
    return s;
  };
  auto absorb = [&](int keep, int gone) {
    for (auto& v : comp)
      if (v == gone) v = keep;
  };
  for (const auto& e : edges) {
    const int a = comp[static_cast<std::size_t>(e.a)], b = comp[static_cast<std::size_t>(e.b)];
    if (a == b) continue;
    const double ta = internal[static_cast<std::size_t>(a)] + k / size_of(a);
    const double tb = internal[static_cast<std::size_t>(b)] + k / size_of(b);
    if (e.w <= std::min(ta, tb)) {
      absorb(a, b);
      // Edges arrive in sorted order, so e.w is the largest MST edge so far.
      internal[static_cast<std::size_t>(a)] = e.w;
    }
  }
  for (const auto& e : edges) {
    const int a = comp[static_cast<std::size_t>(e.a)], b = comp[static_cast<std::size_t>(e.b)];
    if (a != b && (size_of(a) < min_size || size_of(b) < min_size)) absorb(a, b);
  }
  // Ids in order of first appearance.
  std::vector<int> out(static_cast<std::size_t>(n)), seen;
  for (int i = 0; i < n; ++i) {
    const int c = comp[static_cast<std::size_t>(i)];
    auto it = std::find(seen.begin(), seen.end(), c);
    if (it == seen.end()) {
      seen.push_back(c);
      it = seen.end() - 1;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(it - seen.begin());
  }
  return out;
}

TEST(Oracle, FelzenszwalbMatchesReferenceOnAllTwoLevelImages) {
  const std::array<float, 3> lo{0.2f, 0.3f, 0.1f}, hi{0.8f, 0.6f, 0.9f};
  const std::vector<std::pair<double, int>> params{{1.0, 1}, {300.0, 1}, {1000.0, 1}, {600.0, 2}, {2500.0, 3}};
  long cases = 0;
  for (int h = 1; h <= 4; ++h)
    for (int w = 1; w <= 4; ++w) {
      const int n = h * w;
      for (std::uint32_t bits = 0; bits < (1u << n); ++bits) {
        Tensor<float> img(Shape{3, h, w});
        for (int i = 0; i < n; ++i)
          for (int c = 0; c < 3; ++c)
            img[static_cast<std::size_t>(c * n + i)] = ((bits >> i) & 1u) ? hi[static_cast<std::size_t>(c)]
                                                                          : lo[static_cast<std::size_t>(c)];
        for (const auto& [k, min_size] : params) {
          const auto got = felzenszwalb_segment(img, k, min_size, 0.0);
          const auto want = reference_segment(img, k, min_size);
          ASSERT_EQ(got.labels.data, want) << h << "x" << w << " bits " << bits << " k " << k << " min " << min_size;
          ++cases;
        }
      }
    }
  EXPECT_GT(cases, 300000);
}

// Erosion reference: each pixel's r x r window enumerated explicitly once,
// stored as a bit set (empty optional when the window leaves the raster).
std::vector<std::optional<std::uint32_t>> reference_windows(int r) {
  const int lo = -(r / 2), hi = r - 1 - r / 2;
  std::vector<std::optional<std::uint32_t>> win(25);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      std::uint32_t bits = 0;
      bool inside = true;
      for (int dy = lo; dy <= hi; ++dy)
        for (int dx = lo; dx <= hi; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= 5 || xx < 0 || xx >= 5) inside = false;
          else bits |= 1u << (yy * 5 + xx);
        }
      if (inside) win[static_cast<std::size_t>(y * 5 + x)] = bits;
    }
  return win;
}

std::uint32_t reference_erode(std::uint32_t mask, const std::vector<std::optional<std::uint32_t>>& win) {
  std::uint32_t out = 0;
  for (int i = 0; i < 25; ++i) {
    const auto& wi = win[static_cast<std::size_t>(i)];
    if (wi && (mask & *wi) == *wi) out |= 1u << i;
  }
  return out;
}

TEST(Oracle, ErosionMatchesWindowEnumerationOnAllFiveByFiveMasks) {
  BinaryMask m(5, 5);
  for (int r : {1, 3}) {
    const auto win = reference_windows(r);
    for (std::uint32_t bits = 0; bits < (1u << 25); ++bits) {
      for (int i = 0; i < 25; ++i) m.data[static_cast<std::size_t>(i)] = (bits >> i) & 1u;
      const auto e = erode(m, r);
      std::uint32_t got = 0;
      for (int i = 0; i < 25; ++i)
        if (e.data[static_cast<std::size_t>(i)]) got |= 1u << i;
      const auto want = reference_erode(bits, win);
      if (got != want) {
        FAIL() << "r " << r << " mask " << bits << " got " << got << " want " << want;
      }
    }
  }
}

}  // namespace
}  // namespace ssc

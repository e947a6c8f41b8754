#include "sapl/softedge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace sapl::softedge {
namespace {

using i64 = std::int64_t;
using i128 = __int128;

struct IntPlane {
  int h = 0, w = 0;
  std::vector<i64> v;
  IntPlane(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0) {}
  i64& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  i64 clamped(int y, int x) const {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return v[static_cast<size_t>(y) * w + x];
  }
};

std::vector<i64> gaussian_kernel(double sigma, i64* sum) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> g(2 * r + 1);
  double total = 0;
  for (int i = -r; i <= r; ++i) {
    g[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    total += g[i + r];
  }
  std::vector<i64> k(g.size());
  *sum = 0;
  for (size_t i = 0; i < g.size(); ++i) {
    k[i] = std::llround(1024.0 * g[i] / total);
    *sum += k[i];
  }
  return k;
}

IntPlane convolve_separable(const IntPlane& in, const std::vector<i64>& k) {
  const int r = static_cast<int>(k.size() / 2);
  IntPlane tmp(in.h, in.w), out(in.h, in.w);
  for (int y = 0; y < in.h; ++y) {
    for (int x = 0; x < in.w; ++x) {
      i64 acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * in.clamped(y, x + i);
      tmp.at(y, x) = acc;
    }
  }
  for (int y = 0; y < in.h; ++y) {
    for (int x = 0; x < in.w; ++x) {
      i64 acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.clamped(y + i, x);
      out.at(y, x) = acc;
    }
  }
  return out;
}

// 1-D squared distance transform of a sampled function (lower envelope of
// parabolas).
void dt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
           std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    while (k >= 0) {
      double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -inf
                  : ((f[q] + double(q) * q) - (f[v[k - 1]] + double(v[k - 1]) * v[k - 1])) /
                        (2.0 * q - 2.0 * v[k - 1]);
    z[k + 1] = inf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), inf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    double diff = q - v[j];
    d[q] = diff * diff + f[v[j]];
  }
}

}  // namespace

Mask canny_edges(const RgbImage& image, double low, double high) {
  CannyParams p;
  p.low = low;
  p.high = high;
  return canny_edges(image, p);
}

Mask canny_edges(const RgbImage& image, const CannyParams& params) {
  if (!(params.low >= 0 && params.low < params.high)) {
    throw std::invalid_argument("canny_edges: require 0 <= low < high");
  }
  const int h = image.height(), w = image.width();
  Mask out(h, w, 1, 0);
  if (h == 0 || w == 0) return out;

  IntPlane gray(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      gray.at(y, x) = 77 * i64(image(y, x, 0)) + 150 * i64(image(y, x, 1)) + 29 * i64(image(y, x, 2));
    }
  }
  i64 ksum = 0;
  const auto kernel = gaussian_kernel(params.sigma, &ksum);
  const IntPlane smooth = convolve_separable(gray, kernel);

  IntPlane gx(h, w), gy(h, w);
  std::vector<i128> mag2(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      i64 dx = (smooth.clamped(y - 1, x + 1) + 2 * smooth.clamped(y, x + 1) + smooth.clamped(y + 1, x + 1)) -
               (smooth.clamped(y - 1, x - 1) + 2 * smooth.clamped(y, x - 1) + smooth.clamped(y + 1, x - 1));
      i64 dy = (smooth.clamped(y + 1, x - 1) + 2 * smooth.clamped(y + 1, x) + smooth.clamped(y + 1, x + 1)) -
               (smooth.clamped(y - 1, x - 1) + 2 * smooth.clamped(y - 1, x) + smooth.clamped(y - 1, x + 1));
      gx.at(y, x) = dx;
      gy.at(y, x) = dy;
      mag2[static_cast<size_t>(y) * w + x] = i128(dx) * dx + i128(dy) * dy;
    }
  }
  auto m2 = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return mag2[static_cast<size_t>(y) * w + x];
  };

  // One 8-bit gray level corresponds to 256 * ksum^2 internal units.
  const double unit = 256.0 * double(ksum) * double(ksum);
  const i128 lo = i128(std::llround(params.low * unit));
  const i128 hi = i128(std::llround(params.high * unit));
  const i128 lo2 = lo * lo, hi2 = hi * hi;

  // 0 = suppressed, 1 = weak, 2 = strong
  std::vector<std::uint8_t> cls(static_cast<size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const i128 m = mag2[static_cast<size_t>(y) * w + x];
      if (m == 0 || m < lo2) continue;
      const i64 dx = gx.at(y, x), dy = gy.at(y, x);
      const i64 ax = dx < 0 ? -dx : dx, ay = dy < 0 ? -dy : dy;
      i128 prev, next;
      if (i128(ay) * 100000 <= i128(ax) * 41421) {  // |angle| <= 22.5 deg
        prev = m2(y, x - 1);
        next = m2(y, x + 1);
      } else if (i128(ay) * 100000 >= i128(ax) * 241421) {  // >= 67.5 deg
        prev = m2(y - 1, x);
        next = m2(y + 1, x);
      } else if ((dx > 0) == (dy > 0)) {
        prev = m2(y - 1, x - 1);
        next = m2(y + 1, x + 1);
      } else {
        prev = m2(y - 1, x + 1);
        next = m2(y + 1, x - 1);
      }
      if (m > prev && m >= next) cls[static_cast<size_t>(y) * w + x] = m >= hi2 ? 2 : 1;
    }
  }

  std::vector<int> stack;
  for (int i = 0; i < h * w; ++i) {
    if (cls[i] == 2) {
      out.data()[i] = 255;
      stack.push_back(i);
    }
  }
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    const int y = i / w, x = i % w;
    for (int oy = -1; oy <= 1; ++oy) {
      for (int ox = -1; ox <= 1; ++ox) {
        const int ny = y + oy, nx = x + ox;
        if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
        const int j = ny * w + nx;
        if (cls[j] == 1 && out.data()[j] == 0) {
          out.data()[j] = 255;
          stack.push_back(j);
        }
      }
    }
  }
  return out;
}

RealGrid distance_to_edges(const Mask& edges) {
  const int h = edges.height(), w = edges.width();
  const double inf = std::numeric_limits<double>::infinity();
  RealGrid sq(h, w, 1, inf);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (edges(y, x) != 0) sq(y, x) = 0.0;

  const int n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (int x = 0; x < w; ++x) {
    f.resize(h);
    d.resize(h);
    for (int y = 0; y < h; ++y) f[y] = sq(y, x);
    dt_1d(f, d, v, z);
    for (int y = 0; y < h; ++y) sq(y, x) = d[y];
  }
  for (int y = 0; y < h; ++y) {
    f.resize(w);
    d.resize(w);
    for (int x = 0; x < w; ++x) f[x] = sq(y, x);
    dt_1d(f, d, v, z);
    for (int x = 0; x < w; ++x) sq(y, x) = std::sqrt(d[x]);
  }
  return sq;
}

double adaptive_decay(const RealGrid& distance, const Mask& edges, double alpha, double eps) {
  double total = 0;
  size_t count = 0;
  for (size_t i = 0; i < distance.size(); ++i) {
    if (edges.data()[i] == 0 && std::isfinite(distance.data()[i])) {
      total += distance.data()[i];
      ++count;
    }
  }
  const double mean = count == 0 ? 0.0 : total / double(count);
  return alpha / (mean + eps);
}

SoftEdgeMap soft_edge_map_from_edges(const Mask& edges, const SoftEdgeOptions& options) {
  SoftEdgeMap out;
  out.values = RealGrid(edges.height(), edges.width(), 1, 0.0);
  size_t n_edge = 0;
  for (auto v : edges.data()) n_edge += v != 0;
  out.edge_density = edges.empty() ? 0.0 : double(n_edge) / double(edges.size());
  if (n_edge == 0) {
    out.degenerate = true;
    return out;
  }
  const RealGrid dist = distance_to_edges(edges);
  out.decay_k = options.fixed_k ? *options.fixed_k : adaptive_decay(dist, edges, options.alpha, options.eps);
  for (size_t i = 0; i < dist.size(); ++i) {
    out.values.data()[i] = std::exp(-out.decay_k * dist.data()[i]);
  }
  return out;
}

SoftEdgeMap soft_edge_map(const RgbImage& image, const SoftEdgeOptions& options) {
  if (image.empty()) throw std::invalid_argument("soft_edge_map: empty image");
  return soft_edge_map_from_edges(canny_edges(image, options.canny), options);
}

SoftEdgeMap soft_edge_map_in_region(const RgbImage& frame, const Rect& valid,
                                    const SoftEdgeOptions& options) {
  RgbImage crop(valid.height, valid.width, 3);
  for (int y = 0; y < valid.height; ++y)
    for (int x = 0; x < valid.width; ++x)
      for (int c = 0; c < 3; ++c) crop(y, x, c) = frame(valid.top + y, valid.left + x, c);
  SoftEdgeMap inner = soft_edge_map(crop, options);
  SoftEdgeMap out = inner;
  out.values = RealGrid(frame.height(), frame.width(), 1, 0.0);
  for (int y = 0; y < valid.height; ++y)
    for (int x = 0; x < valid.width; ++x) out.values(valid.top + y, valid.left + x) = inner.values(y, x);
  return out;
}

RealGrid resample_to_grid(const RealGrid& values, int grid, int footprint) {
  if (grid * footprint > values.height() || grid * footprint > values.width()) {
    throw std::invalid_argument("resample_to_grid: grid exceeds map extent");
  }
  RealGrid out(grid, grid, 1, 0.0);
  const double area = double(footprint) * footprint;
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      double acc = 0;
      for (int y = gy * footprint; y < (gy + 1) * footprint; ++y)
        for (int x = gx * footprint; x < (gx + 1) * footprint; ++x) acc += values(y, x);
      out(gy, gx) = acc / area;
    }
  }
  return out;
}

RealGrid all_ones(int grid) { return RealGrid(grid, grid, 1, 1.0); }

Image<std::uint16_t> to_gray16(const SoftEdgeMap& map) {
  Image<std::uint16_t> out(map.values.height(), map.values.width(), 1);
  for (size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = static_cast<std::uint16_t>(std::lround(65535.0 * std::clamp(map.values.data()[i], 0.0, 1.0)));
  }
  return out;
}

}  // namespace sapl::softedge

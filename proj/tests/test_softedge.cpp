#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "sapl/corpus.hpp"
#include "sapl/softedge.hpp"

using namespace sapl;
using namespace sapl::softedge;

namespace {

RealGrid brute_force_distance(const Mask& edges) {
  RealGrid d(edges.height(), edges.width(), 1, std::numeric_limits<double>::infinity());
  for (int y = 0; y < edges.height(); ++y)
    for (int x = 0; x < edges.width(); ++x)
      for (int v = 0; v < edges.height(); ++v)
        for (int u = 0; u < edges.width(); ++u)
          if (edges(v, u)) d(y, x) = std::min(d(y, x), std::hypot(double(y - v), double(x - u)));
  return d;
}

Mask random_edges(int h, int w, unsigned seed, double density) {
  std::srand(seed);
  Mask m(h, w);
  for (auto& v : m.data()) v = (std::rand() / double(RAND_MAX)) < density ? 255 : 0;
  return m;
}

RgbImage scene(int n, std::uint64_t seed) { return corpus::synthetic_scene(n, n, corpus::SceneStyle{}, seed); }

}  // namespace

TEST(Distance, MatchesBruteForce) {
  for (unsigned seed = 0; seed < 6; ++seed) {
    const Mask edges = random_edges(23, 31, seed, 0.01 + 0.05 * seed);
    const RealGrid fast = distance_to_edges(edges);
    const RealGrid slow = brute_force_distance(edges);
    for (size_t i = 0; i < fast.size(); ++i) EXPECT_NEAR(fast.data()[i], slow.data()[i], 1e-9);
  }
}

TEST(Distance, NoEdgesIsInfinite) {
  const RealGrid d = distance_to_edges(Mask(5, 5));
  for (double v : d.data()) EXPECT_TRUE(std::isinf(v));
}

TEST(SoftEdge, OneOnEdgesAndBounded) {
  const RgbImage img = scene(96, 3);
  const SoftEdgeMap m = soft_edge_map(img);
  const Mask e = canny_edges(img);
  ASSERT_FALSE(m.degenerate);
  for (size_t i = 0; i < e.size(); ++i) {
    EXPECT_GE(m.values.data()[i], 0.0);
    EXPECT_LE(m.values.data()[i], 1.0);
    if (e.data()[i]) EXPECT_DOUBLE_EQ(m.values.data()[i], 1.0);
  }
}

TEST(SoftEdge, MonotoneInDistance) {
  Mask e(1, 40);
  e(0, 0) = 255;
  SoftEdgeOptions o;
  o.fixed_k = 0.3;
  const SoftEdgeMap m = soft_edge_map_from_edges(e, o);
  for (int x = 1; x < 40; ++x) EXPECT_LT(m.values(0, x), m.values(0, x - 1));
  EXPECT_NEAR(m.values(0, 10), std::exp(-3.0), 1e-12);
}

TEST(SoftEdge, InvariantToBrightnessShift) {
  RgbImage img = scene(80, 5);
  for (auto& v : img.data()) v = std::uint8_t(v * 200 / 255);
  RgbImage shifted = img;
  for (auto& v : shifted.data()) v = std::uint8_t(v + 10);
  EXPECT_EQ(canny_edges(img), canny_edges(shifted));
  EXPECT_EQ(soft_edge_map(img).values, soft_edge_map(shifted).values);
}

TEST(SoftEdge, ConstantImageIsDegenerate) {
  const SoftEdgeMap m = soft_edge_map(RgbImage(32, 32, 3, 90));
  EXPECT_TRUE(m.degenerate);
  for (double v : m.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(SoftEdge, AllEdgeImageIsAllOnes) {
  const SoftEdgeMap m = soft_edge_map_from_edges(Mask(8, 8, 1, 255));
  for (double v : m.values.data()) EXPECT_EQ(v, 1.0);
}

TEST(SoftEdge, AdaptiveDecayFormula) {
  Mask e(1, 5);
  e(0, 0) = 255;
  const RealGrid d = distance_to_edges(e);
  EXPECT_NEAR(adaptive_decay(d, e, 3.0, 1e-6), 3.0 / (2.5 + 1e-6), 1e-12);
}

TEST(SoftEdge, RegionKeepsPaddingZero) {
  RgbImage frame(512, 512, 3);
  const RgbImage small = scene(64, 2);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      for (int c = 0; c < 3; ++c) frame(y, x, c) = small(y, x, c);
  const SoftEdgeMap m = soft_edge_map_in_region(frame, Rect{0, 0, 64, 64});
  EXPECT_EQ(m.values.height(), 512);
  EXPECT_EQ(m.values(100, 100), 0.0);
  EXPECT_EQ(m.values(10, 300), 0.0);
}

TEST(Resample, AreaAverage) {
  RealGrid v(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) v(y, x) = y * 4 + x;
  const RealGrid g = resample_to_grid(v, 2, 2);
  EXPECT_DOUBLE_EQ(g(0, 0), (0 + 1 + 4 + 5) / 4.0);
  EXPECT_DOUBLE_EQ(g(1, 1), (10 + 11 + 14 + 15) / 4.0);
  const RealGrid ones = all_ones(3);
  for (double x : ones.data()) EXPECT_EQ(x, 1.0);
}

TEST(Export, Gray16Quantisation) {
  SoftEdgeMap m;
  m.values = RealGrid(1, 3);
  m.values(0, 0) = 0.0;
  m.values(0, 1) = 0.5;
  m.values(0, 2) = 1.0;
  const auto q = to_gray16(m);
  EXPECT_EQ(q(0, 0), 0);
  EXPECT_EQ(q(0, 1), 32768);
  EXPECT_EQ(q(0, 2), 65535);
}

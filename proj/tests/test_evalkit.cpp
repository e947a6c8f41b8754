#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "sapl/evalkit.hpp"

using namespace sapl;
using namespace sapl::evalkit;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& l) {
  double wins = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (l[i] == 1 && l[j] == 0) {
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        ++pairs;
      }
  return wins / double(pairs);
}

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
};

Instance random_instance(std::mt19937& rng) {
  std::uniform_int_distribution<int> n_dist(2, 200), coarse(0, 9);
  std::bernoulli_distribution coin(0.5);
  const int n = n_dist(rng);
  Instance in;
  for (int i = 0; i < n; ++i) {
    in.labels.push_back(i < 2 ? i : coin(rng));
    in.scores.push_back(coin(rng) ? coarse(rng) / 10.0 : std::uniform_real_distribution<double>()(rng));
  }
  return in;
}

}  // namespace

TEST(ImageAuc, WorkedExamples) {
  EXPECT_DOUBLE_EQ(image_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75);
  EXPECT_DOUBLE_EQ(image_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(image_auc({0.3, 0.3, 0.3}, {0, 1, 1}), 0.5);
  EXPECT_THROW(image_auc({0.1, 0.2}, {1, 1}), MetricError);
  EXPECT_THROW(image_auc({0.1}, {1, 0}), MetricError);
}

TEST(ImageAuc, MatchesPairwiseCountAndTrapezoid) {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const Instance in = random_instance(rng);
    const double auc = image_auc(in.scores, in.labels);
    EXPECT_NEAR(auc, pairwise_auc(in.scores, in.labels), 1e-9);
    EXPECT_NEAR(auc, roc_auc_trapezoid(in.scores, in.labels), 1e-9);
  }
}

TEST(PixelF1, WorkedExamples) {
  Mask m(2, 4);
  RealGrid h(2, 4);
  for (int x = 0; x < 4; ++x) m(0, x) = 255;
  h(0, 0) = h(0, 1) = h(1, 0) = h(1, 1) = 0.9;
  EXPECT_DOUBLE_EQ(pixel_f1(h, m), 0.5);
  RealGrid exact(2, 4);
  for (int x = 0; x < 4; ++x) exact(0, x) = 0.5;
  EXPECT_DOUBLE_EQ(pixel_f1(exact, m), 1.0);
  EXPECT_DOUBLE_EQ(pixel_f1(RealGrid(2, 4), m), 0.0);
  EXPECT_THROW(pixel_f1(h, Mask(2, 4)), MetricError);
  EXPECT_THROW(pixel_f1(RealGrid(3, 3), m), MetricError);
}

TEST(PixelF1, MatchesConfusionMatrixAndIsMonotone) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 300; ++trial) {
    const int h = 1 + int(rng() % 12), w = 1 + int(rng() % 12);
    RealGrid heat(h, w);
    Mask mask(h, w);
    for (auto& v : heat.data()) v = u(rng);
    for (auto& v : mask.data()) v = u(rng) < 0.3 ? 1 : 0;
    mask.data()[0] = 1;
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      const bool p = heat.data()[i] >= 0.5, t = mask.data()[i];
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    const double f1 = pixel_f1(heat, mask);
    EXPECT_NEAR(f1, 2.0 * tp / double(2 * tp + fp + fn), 1e-12);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask.data()[i] && heat.data()[i] < 0.5) {
        heat.data()[i] = 1.0;
        EXPECT_GE(pixel_f1(heat, mask), f1);
        break;
      }
    }
  }
}

TEST(Regions, PartitionIsCompleteAndDisjoint) {
  const auto s = corpus::synthesize_splice(corpus::synthetic_scene(96, 96, {}, 1),
                                           corpus::synthetic_scene(96, 96, {12.0, 0.0, 3, 6}, 2), 4);
  const auto labels = region_labels(s.image, *s.mask);
  std::array<int, 4> counts{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels.data()[i];
    ASSERT_GE(l, 1);
    ASSERT_LE(l, 4);
    ++counts[std::size_t(l - 1)];
    if (l == 1 + int(Region::manipulated_inner)) EXPECT_TRUE(s.mask->data()[i]);
    if (l == 1 + int(Region::authentic_edge)) EXPECT_FALSE(s.mask->data()[i]);
  }
  for (int c : counts) EXPECT_GT(c, 0);
}

TEST(Regions, ConstantImageIsDegenerate) {
  std::vector<corpus::Sample> samples(3);
  for (int i = 0; i < 3; ++i) {
    samples[i].image = RgbImage(48, 48, 3, 128);
    samples[i].label = 1;
    Mask m(48, 48);
    for (int y = 10; y < 30; ++y)
      for (int x = 12; x < 36; ++x) m(y, x) = 255;
    samples[i].mask = m;
  }
  const RegionStats st = region_stats(samples);
  for (Region r : {Region::manipulated_edge, Region::manipulated_inner, Region::authentic_inner}) {
    EXPECT_EQ(st.at(r, Statistic::local_variance).mean, 0.0);
    EXPECT_EQ(st.at(r, Statistic::gradient).mean, 0.0);
    EXPECT_EQ(st.at(r, Statistic::skewness).undefined, 3);
    EXPECT_EQ(st.at(r, Statistic::kurtosis).count, 0);
  }
  EXPECT_EQ(st.skipped[std::size_t(Region::authentic_edge)], 3);
  std::ostringstream os;
  write_region_stats_csv(os, st);
  EXPECT_NE(os.str().find("manipulated_edge"), std::string::npos);
}

TEST(Moments, GaussianKurtosisNearZero) {
  std::mt19937 rng(3);
  std::normal_distribution<double> n(100, 15);
  std::vector<double> v(20000);
  for (double& x : v) x = n(rng);
  const Moments m = sample_moments(v);
  ASSERT_TRUE(m.kurtosis && m.skewness);
  EXPECT_NEAR(*m.kurtosis, 0.0, 0.2);
  EXPECT_NEAR(*m.skewness, 0.0, 0.1);
  EXPECT_FALSE(sample_moments({2, 2, 2}).skewness);
  const Moments two = sample_moments({0, 0, 0, 1});
  EXPECT_NEAR(*two.skewness, (0.75 * 0.0 + 0.25 * std::pow(0.75, 3) + 0.75 * std::pow(-0.25, 3)) /
                                 std::pow(0.1875, 1.5),
              1e-12);
}

TEST(Filters, SobelAndVarianceOracles) {
  RealGrid ramp(5, 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) ramp(y, x) = 3.0 * x;
  // Interior Sobel x response of a slope-3 ramp is 8 * 3.
  EXPECT_DOUBLE_EQ(sobel_magnitude(ramp)(2, 2), 24.0);
  const RealGrid var = local_variance(ramp, 3);
  EXPECT_NEAR(var(2, 2), 6.0, 1e-9);
  const RealGrid flat = local_variance(RealGrid(4, 4, 1, 9.0), 7);
  for (double v : flat.data()) EXPECT_EQ(v, 0.0);
}

TEST(Report, AllPositiveBaseline) {
  corpus::Sample s;
  s.image = RgbImage(2, 2, 3);
  s.label = 1;
  s.mask = Mask(2, 2);
  s.mask->data()[0] = 1;
  corpus::Sample a;
  a.image = RgbImage(2, 2, 3);
  EXPECT_DOUBLE_EQ(*all_positive_f1({s, a}), 2.0 / 5.0);
  EXPECT_FALSE(all_positive_f1({a}));
}

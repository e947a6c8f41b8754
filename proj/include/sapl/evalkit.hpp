#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sapl/corpus.hpp"
#include "sapl/pipeline.hpp"

namespace sapl::evalkit {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Mann-Whitney statistic P(pos > neg) + P(tie)/2 via midranks.
double image_auc(const std::vector<double>& scores, const std::vector<int>& labels);
// Area under the empirical ROC curve by trapezoids over distinct thresholds.
double roc_auc_trapezoid(const std::vector<double>& scores, const std::vector<int>& labels);

// 2TP / (2TP + FP + FN) after binarising at `threshold` (>=). Throws on an
// empty mask.
double pixel_f1(const RealGrid& heatmap, const Mask& mask, double threshold = 0.5);

struct PerImage {
  std::string id;
  int label = 0;
  double score = 0;
  std::optional<double> f1;
};

struct MetricsReport {
  std::optional<double> i_auc;
  std::optional<double> p_f1;
  double threshold = 0.5;
  int f1_count = 0;
  int empty_masks = 0;
  std::vector<PerImage> per_image;
};

struct EvalOptions {
  double threshold = 0.5;
  std::filesystem::path heatmap_dir;  // empty: heatmaps are not written
};

MetricsReport evaluate(pipeline::Model& model, const std::vector<corpus::Sample>& data, const EvalOptions& opts = {});
MetricsReport evaluate(pipeline::Model& model, const std::vector<pipeline::PreparedSample>& data,
                       const EvalOptions& opts = {});
// Mean F1 of a heatmap that is 1 everywhere, over labelled masks.
std::optional<double> all_positive_f1(const std::vector<corpus::Sample>& data);

void write_metrics_csv(std::ostream& os, const MetricsReport& r);

enum class Region { manipulated_edge, manipulated_inner, authentic_edge, authentic_inner };
inline constexpr std::array<Region, 4> kRegions{Region::manipulated_edge, Region::manipulated_inner,
                                                Region::authentic_edge, Region::authentic_inner};
std::string to_string(Region r);

enum class Statistic { local_variance, gradient, skewness, kurtosis };
inline constexpr std::array<Statistic, 4> kStatistics{Statistic::local_variance, Statistic::gradient,
                                                      Statistic::skewness, Statistic::kurtosis};
std::string to_string(Statistic s);

struct RegionOptions {
  int band_radius = 3;
  int variance_window = 7;
  softedge::CannyParams canny;
};

// 1 + Region per pixel. Band = dilation minus erosion of the mask; authentic
// edges are Canny edges outside the dilated mask.
Image<std::uint8_t> region_labels(const RgbImage& image, const Mask& mask, const RegionOptions& opts = {});

struct Moments {
  std::optional<double> skewness;  // g1
  std::optional<double> kurtosis;  // g2 - 3
};
// Bias-uncorrected sample moments; nullopt for zero variance.
Moments sample_moments(const std::vector<double>& values);

// Per-pixel variance over a square window (reflect-101 borders).
RealGrid local_variance(const RealGrid& gray, int window);
// Sobel magnitude (3x3, reflect-101 borders).
RealGrid sobel_magnitude(const RealGrid& gray);

struct Summary {
  double mean = 0;
  double stddev = 0;
  int count = 0;     // images contributing
  int undefined = 0; // images where the statistic was undefined
};

struct RegionStats {
  std::array<std::array<Summary, 4>, 4> table{};  // [region][statistic]
  std::array<int, 4> skipped{};                   // images with an empty region
  const Summary& at(Region r, Statistic s) const { return table[std::size_t(r)][std::size_t(s)]; }
};

RegionStats region_stats(const std::vector<corpus::Sample>& samples, const RegionOptions& opts = {});
void write_region_stats_csv(std::ostream& os, const RegionStats& s);

struct SweepRow {
  corpus::PerturbationKind kind;
  double level = 0;
  std::optional<double> p_f1;
  std::optional<double> i_auc;
};

std::vector<SweepRow> robustness_sweep(pipeline::Model& model, const std::vector<corpus::Sample>& data,
                                       std::vector<corpus::PerturbationSpec> specs, double threshold = 0.5);
void write_robustness_csv(std::ostream& os, const std::vector<SweepRow>& rows);

}  // namespace sapl::evalkit

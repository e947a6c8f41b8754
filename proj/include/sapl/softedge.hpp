#pragma once

#include <optional>

#include "sapl/image.hpp"

namespace sapl::softedge {

struct CannyParams {
  double low = 50.0;   // on the 8-bit gray scale
  double high = 150.0;
  double sigma = 1.4;
};

// Classical Canny: gray, Gaussian, Sobel, non-maximum suppression,
// hysteresis. All arithmetic is integer, so the result is exactly invariant
// to adding a constant to every channel.
Mask canny_edges(const RgbImage& image, const CannyParams& params = {});
Mask canny_edges(const RgbImage& image, double low, double high);

// Exact Euclidean distance from every pixel to the nearest nonzero pixel of
// `edges` (separable lower-envelope transform). +inf everywhere if no edges.
RealGrid distance_to_edges(const Mask& edges);

struct SoftEdgeMap {
  RealGrid values;  // in [0,1]
  double decay_k = 0.0;
  double edge_density = 0.0;
  bool degenerate = false;
};

struct SoftEdgeOptions {
  CannyParams canny;
  double alpha = 3.0;
  double eps = 1e-6;
  std::optional<double> fixed_k;  // bypasses the adaptive rule
};

// k = alpha / (mean distance over non-edge pixels + eps).
double adaptive_decay(const RealGrid& distance, const Mask& edges, double alpha, double eps);

SoftEdgeMap soft_edge_map(const RgbImage& image, const SoftEdgeOptions& options = {});
SoftEdgeMap soft_edge_map_from_edges(const Mask& edges, const SoftEdgeOptions& options = {});

// Runs the generator on the `valid` crop of a padded frame and embeds the
// result back into a frame-sized map; padding cells stay 0.
SoftEdgeMap soft_edge_map_in_region(const RgbImage& frame, const Rect& valid,
                                    const SoftEdgeOptions& options = {});

// Area average of `values` over grid x grid cells of footprint x footprint
// pixels each (the cells tile the top-left grid*footprint square).
RealGrid resample_to_grid(const RealGrid& values, int grid, int footprint);

RealGrid all_ones(int grid);

// round(65535 * value)
Image<std::uint16_t> to_gray16(const SoftEdgeMap& map);

}  // namespace sapl::softedge

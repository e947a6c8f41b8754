#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sapl/image.hpp"

namespace sapl::corpus {

inline constexpr int kInputSize = 512;

struct Sample {
  RgbImage image;
  int label = 0;  // 0 authentic, 1 manipulated
  std::optional<Mask> mask;  // evaluation only
  std::string id;
};

// Throws std::invalid_argument when a Sample invariant is broken.
void validate(const Sample& s);

struct PreprocessedSample {
  Image<float> pixels;  // 512x512x3 in [0,1]
  RgbImage frame;       // the same content as 8-bit RGB, used for edges
  Rect valid_region;
  double scale_factor = 1.0;
  int source_height = 0;
  int source_width = 0;
};

PreprocessedSample preprocess(const RgbImage& image, int size = kInputSize);
inline PreprocessedSample preprocess(const Sample& s, int size = kInputSize) {
  return preprocess(s.image, size);
}

enum class Layout { casia, columbia, coverage, imd2020, nist16, synthetic };
Layout parse_layout(const std::string& name);
std::string to_string(Layout layout);

struct LoadOptions {
  std::string mask_suffix = "_gt";
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> warnings;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Dataset load_dataset(const std::filesystem::path& root, Layout layout, const LoadOptions& options = {});

// Writes the canonical layout: authentic/, manipulated/, masks/<stem>_gt.png.
void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples);

// Pastes a random convex polygon (4-8 vertices, 2-20% of the base frame)
// cut from `donor` into `base`, with a random brightness shift of 30-65 levels
// on the pasted content.
Sample synthesize_splice(const RgbImage& base, const RgbImage& donor, std::uint64_t seed);

struct SceneStyle {
  double noise_sigma = 2.0;
  double edge_blur = 1.5;
  int min_shapes = 3;
  int max_shapes = 6;
};

// Procedural scene: smooth background ramp plus soft-edged shapes and sensor
// noise.
RgbImage synthetic_scene(int height, int width, const SceneStyle& style, std::uint64_t seed);

struct SyntheticCorpusOptions {
  int splices = 200;
  int authentic = 200;
  int size = 512;
  SceneStyle base_style{};
  SceneStyle donor_style{12.0, 0.0, 3, 6};
  std::uint64_t seed = 0;
};

// Splices first, then authentic scenes; ids are "syn_s####" / "syn_a####".
std::vector<Sample> synthetic_corpus(const SyntheticCorpusOptions& options);

enum class PerturbationKind { jpeg, gaussian_noise, gaussian_blur };
std::string to_string(PerturbationKind kind);
PerturbationKind parse_perturbation_kind(const std::string& name);

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::jpeg;
  double level = 100.0;
  std::uint64_t seed = 0;
};

void validate(const PerturbationSpec& spec);

// Identity cases: jpeg quality 100, noise sigma 0, blur radius 0.
Sample perturb(const Sample& s, const PerturbationSpec& spec);

std::vector<PerturbationSpec> default_sweep(PerturbationKind kind, std::uint64_t seed);

size_t jpeg_encoded_size(const RgbImage& image, int quality);

}  // namespace sapl::corpus

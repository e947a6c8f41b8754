#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sapl/backbone.hpp"
#include "sapl/corpus.hpp"
#include "sapl/pipeline.hpp"

namespace sapl {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::string backbone = "toy";  // toy | vit-l14-336
  std::filesystem::path weights;
  std::filesystem::path data;
  corpus::Layout layout = corpus::Layout::synthetic;
  std::filesystem::path eval_data;
  corpus::Layout eval_layout = corpus::Layout::synthetic;
  std::filesystem::path checkpoint;
  std::filesystem::path out = "runs/latest";
  double threshold = 0.5;
  bool layers_set = false;
  int synthetic_splices = 200;
  int synthetic_authentic = 200;
  int synthetic_size = 512;
  std::vector<corpus::PerturbationKind> sweep_kinds{corpus::PerturbationKind::jpeg,
                                                     corpus::PerturbationKind::gaussian_noise,
                                                     corpus::PerturbationKind::gaussian_blur};
  int band_radius = 3;
  int variance_window = 7;
  pipeline::TrainConfig train;

  // Throws ConfigError on an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  // One "key = value" line per setting, defaults resolved.
  std::string dump() const;
  std::vector<std::string> keys() const;
};

// Flat "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

backbone::BackboneConfig backbone_config(const RunConfig& c);
// File values, then overrides; layers default to the backbone's quartiles.
RunConfig resolve(const std::map<std::string, std::string>& file, const std::map<std::string, std::string>& overrides);
void finalize(RunConfig& c);

}  // namespace sapl

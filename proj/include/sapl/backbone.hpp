#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "sapl/archive.hpp"
#include "sapl/autograd.hpp"
#include "sapl/corpus.hpp"

namespace sapl::backbone {

using ag::Matrix;
using ag::Parameter;
using ag::Tape;
using ag::Var;

struct VisionConfig {
  int stem_pool = 4;  // fixed area-average downsampling before patchify
  int patch = 16;
  int width = 64;
  int layers = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int weight_grid = 0;  // positional grid stored in weights; 0 = native grid
  // Fixed high-pass stem channel |gray - box3(gray)| appended to RGB.
  bool residual_channel = true;
  // Patch tokens attend only to patches within this Chebyshev radius on the
  // grid; the class token attends to all. 0 = global attention.
  int attention_radius = 1;
};

struct TextConfig {
  int width = 64;
  int layers = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int context_length = 24;
};

struct LoraConfig {
  int rank = 8;
  double alpha = 16.0;
};

struct BackboneConfig {
  std::string name = "toy";
  int frame = corpus::kInputSize;
  VisionConfig vision;
  TextConfig text;
  LoraConfig lora;
  int joint_dim = 32;
  double logit_scale = 100.0;
  std::uint64_t seed = 1234;

  int grid() const { return frame / vision.stem_pool / vision.patch; }
  int footprint() const { return vision.stem_pool * vision.patch; }
  std::string describe() const;
  std::uint64_t hash() const;
};

BackboneConfig toy_config();
// ViT-L/14 at 336 px weights run on the 512 frame (positional grid 24 -> 36).
BackboneConfig vit_l14_336_config();

struct LoRAAdapter {
  Parameter down;  // r x D
  Parameter up;    // D x r
  int rank = 1;
  double scale = 1.0;
};

LoRAAdapter make_lora(const std::string& name, int dim, const LoraConfig& cfg, std::uint64_t seed);

// frozen_out + scale * up * (down * input)
Eigen::VectorXd apply_lora(const Eigen::VectorXd& frozen_out, const Eigen::VectorXd& input, const Matrix& down,
                           const Matrix& up, double scale);
// Row-wise delta for an n x D activation block.
Var lora_delta(Tape& tape, const Var& x, LoRAAdapter& adapter);

struct PatchFeaturePyramid {
  std::map<int, Matrix> per_layer;  // layer -> (G*G) x joint_dim, row-major over the grid
  Matrix cls;                       // 1 x joint_dim, final layer
  int grid = 0;
  int joint_dim = 0;
};

struct PyramidVars {
  std::map<int, Var> per_layer;
  Var cls;
  int grid = 0;
};

enum class TextClass { real, fake };

struct TextFeature {
  Matrix embedding;  // 1 x joint_dim, unit norm
  TextClass cls = TextClass::real;
};

// A prompt element is either a learnable (1 x text width) vector or a
// vocabulary token id.
using PromptToken = std::variant<Var, int>;

struct Block {
  Parameter ln1_g, ln1_b, in_w, in_b, out_w, out_b, ln2_g, ln2_b, fc_w, fc_b, proj_w, proj_b;
};

class LayerSelectionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DualEncoder {
 public:
  // Randomly initialised frozen towers (toy backend).
  explicit DualEncoder(const BackboneConfig& config);
  // Frozen weights from an archive (pretrained backend).
  static DualEncoder from_archive(const BackboneConfig& config, const std::filesystem::path& weights);

  DualEncoder(DualEncoder&&) = default;
  DualEncoder& operator=(DualEncoder&&) = default;

  const BackboneConfig& config() const { return config_; }
  int grid() const { return config_.grid(); }
  int text_width() const { return config_.text.width; }
  int joint_dim() const { return config_.joint_dim; }
  int depth() const { return config_.vision.layers; }
  int channels() const { return config_.vision.residual_channel ? 4 : 3; }

  // Normalised, pooled, patchified input: (G*G) x (patch*patch*3).
  Matrix patchify(const corpus::PreprocessedSample& s) const;

  PyramidVars encode_image(Tape& tape, const Matrix& patches, const std::set<int>& layers);
  PatchFeaturePyramid encode_image(const corpus::PreprocessedSample& s, const std::set<int>& layers);

  Var encode_text(Tape& tape, const std::vector<PromptToken>& prompt);
  TextFeature encode_text(const std::vector<int>& token_ids, TextClass cls);

  int token_id(const std::string& word) const;
  std::vector<int> tokenize(const std::string& words) const;
  int max_prompt_length() const { return config_.text.context_length - 2; }

  std::vector<Parameter*> frozen_parameters();
  std::vector<Parameter*> lora_parameters();
  std::vector<LoRAAdapter>& lora_adapters() { return lora_; }
  // Fresh adapters (up = 0, so the towers behave as frozen).
  void reset_lora(std::uint64_t seed);

  // Archive of frozen weights under the names from_archive expects.
  Archive export_weights() const;

 private:
  DualEncoder() = default;
  void init_frozen(bool sample);
  void allocate();
  void load(const Archive& a);
  Var run_block(Tape& tape, const Var& x, Block& b, int heads, bool causal, LoRAAdapter* lq, LoRAAdapter* lv,
                const Matrix* mask = nullptr);
  std::vector<std::pair<std::string, Parameter*>> named_frozen();

  BackboneConfig config_;
  // vision
  Parameter conv_w_, class_emb_, vis_pos_, ln_pre_g_, ln_pre_b_, ln_post_g_, ln_post_b_, vis_proj_;
  std::vector<Block> vis_blocks_;
  std::vector<LoRAAdapter> lora_;  // q, v per block
  Matrix attention_mask_;          // empty = global
  // text
  Parameter tok_emb_, txt_pos_, ln_final_g_, ln_final_b_, txt_proj_;
  std::vector<Block> txt_blocks_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> vocab_index_;
  int sot_ = 0, eot_ = 1;
};

// Bicubic (a = -0.75, half-pixel centres) resampling of a src x src grid of
// row vectors to dst x dst.
Matrix interpolate_pos_grid(const Matrix& grid_rows, int src, int dst);

}  // namespace sapl::backbone

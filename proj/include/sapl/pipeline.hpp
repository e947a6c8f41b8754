#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "sapl/backbone.hpp"
#include "sapl/corpus.hpp"
#include "sapl/ecpl.hpp"
#include "sapl/hecl.hpp"
#include "sapl/softedge.hpp"

namespace sapl::pipeline {

using ag::Matrix;
using ag::Parameter;
using ag::Tape;
using ag::Var;

struct TrainConfig {
  int epochs = 30;
  int batch_size = 12;
  double learning_rate = 1e-5;
  double weight_decay = 0.01;
  double w_max = 0.1;
  int prompt_length = 12;     // L1
  int queue_length = 1024;    // L2
  int top_k = 10;             // K
  double tau = 0.07;
  std::set<int> layers{6, 12, 18, 24};
  int contrast_dim = 256;
  int attention_heads = 8;
  int warmup = 64;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  bool ecpl = true;
  bool hecl = true;
  bool ecpl_edge = true;
  bool hecl_edge = true;
  ecpl::PromptStyle prompt_style = ecpl::PromptStyle::ecpl;

  softedge::SoftEdgeOptions edge;

  // Prompt style actually used once the module toggle is applied.
  ecpl::PromptStyle effective_style() const { return ecpl ? prompt_style : ecpl::PromptStyle::handcrafted; }
};

void validate(const TrainConfig& c, const backbone::DualEncoder& enc);
// Layers {6,12,18,24} scaled onto a shallower backbone (quartiles of depth).
std::set<int> default_layers(int depth);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Two-class cross-entropy over logit_scale * cosine(cls, text).
double classification_loss(const Matrix& cls, const Matrix& t_real, const Matrix& t_fake, int label,
                           double logit_scale);
Var classification_loss(Tape& tape, const Var& cls, const Var& t_real, const Var& t_fake, int label,
                        double logit_scale);

double schedule_weight(long t, long total, double w_max);
double total_loss(double cls_loss, double hecl_loss, long t, long total, double w_max);

// Everything about a sample that does not depend on trainable state.
struct PreparedSample {
  std::string id;
  int label = 0;
  std::optional<Mask> mask;
  Matrix patches;
  Matrix edge;  // (G*G) x 1 soft edge weight per patch
  Rect valid;
  int source_height = 0;
  int source_width = 0;
};

PreparedSample prepare(const corpus::Sample& s, const backbone::DualEncoder& enc,
                       const softedge::SoftEdgeOptions& edge = {});

struct Forward {
  backbone::PyramidVars pyramid;
  Var cls;  // unit norm
  Var t_real;
  Var t_fake;
};

class Model {
 public:
  Model(backbone::DualEncoder& backbone, const TrainConfig& config);

  Forward forward(Tape& tape, const PreparedSample& s);

  // Every parameter the optimiser may touch, in a stable order.
  std::vector<Parameter*> trainable_parameters();
  std::vector<std::string> trainable_names();

  Archive checkpoint() const;
  void load_checkpoint(const Archive& a);
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

  backbone::DualEncoder& backbone() { return *backbone_; }
  const TrainConfig& config() const { return config_; }

  ecpl::PromptBank bank;
  ecpl::EdgePromptGenerator generator;
  std::map<int, hecl::ProjectionHead> heads;

 private:
  backbone::DualEncoder* backbone_;
  TrainConfig config_;
};

struct SampleLoss {
  Var total;           // classification + w * contrastive
  Var classification;
  double contrastive = 0;  // 0 while the queues warm up
  Matrix to_pos;       // detached projections bound for the queues
  Matrix to_neg;
};

// One image's training objective against fixed queue snapshots; `contrast`
// false skips the contrastive term but still produces the projections.
SampleLoss sample_loss(Tape& tape, Model& model, const PreparedSample& s, const hecl::QueueSnapshot& queues, double w,
                       bool contrast);

struct EpochRecord {
  int epoch = 0;
  double loss = 0;
  double cls_loss = 0;
  double hecl_loss = 0;
  int hecl_steps = 0;  // steps past queue warm-up
  std::filesystem::path checkpoint;
};

struct TrainResult {
  std::vector<double> step_losses;
  std::vector<EpochRecord> epochs;
  std::filesystem::path manifest;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  std::function<void(const EpochRecord&)> on_epoch;
  std::map<std::string, std::string> manifest_extra;
};

TrainResult train(Model& model, const std::vector<PreparedSample>& data, const TrainOptions& options = {});
TrainResult train(Model& model, const std::vector<corpus::Sample>& data, const TrainOptions& options = {});

struct LocalizationResult {
  RealGrid heatmap;  // source resolution, fake probability
  int label = 0;
  double score = 0;
  std::map<int, Matrix> per_layer_maps;  // G x G
};

// Unweighted mean of equally sized grids.
Matrix aggregate_layers(const std::vector<Matrix>& maps);
// G x G -> frame -> crop to valid -> source size.
RealGrid heatmap_to_source(const Matrix& grid_map, int frame, const Rect& valid, int height, int width);

LocalizationResult localize(Model& model, const PreparedSample& s);
LocalizationResult localize(Model& model, const corpus::Sample& s);

// "SAPLMAP1", uint32 H, uint32 W, then H*W float32, all little-endian.
void write_heatmap(const std::filesystem::path& path, const RealGrid& map);
RealGrid read_heatmap(const std::filesystem::path& path);
void write_heatmap_preview(const std::filesystem::path& path, const RealGrid& map);

}  // namespace sapl::pipeline

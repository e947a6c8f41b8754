#include "sapl/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "sapl/optim.hpp"
#include "sapl/rng.hpp"

namespace sapl::pipeline {

namespace fs = std::filesystem;
using ag::Index;

std::set<int> default_layers(int depth) {
  if (depth < 1) throw std::invalid_argument("depth must be positive");
  std::set<int> out;
  for (int q = 1; q <= 4; ++q) out.insert(std::max(1, depth * q / 4));
  return out;
}

void validate(const TrainConfig& c, const backbone::DualEncoder& enc) {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid training config: ") + what);
  };
  need(c.epochs >= 1, "epochs must be >= 1");
  need(c.batch_size >= 1, "batch_size must be >= 1");
  need(c.learning_rate > 0, "learning_rate must be > 0");
  need(c.weight_decay >= 0, "weight_decay must be >= 0");
  need(c.w_max >= 0, "w_max must be >= 0");
  need(c.prompt_length >= 1, "prompt_length must be >= 1");
  need(c.queue_length >= 1, "queue_length must be >= 1");
  need(c.top_k >= 1, "top_k must be >= 1");
  need(c.tau > 0, "tau must be > 0");
  need(c.contrast_dim >= 1, "contrast_dim must be >= 1");
  need(c.attention_heads >= 1 && enc.text_width() % c.attention_heads == 0,
       "attention_heads must divide the text width");
  need(c.warmup >= 0, "warmup must be >= 0");
  need(c.grad_clip > 0, "grad_clip must be > 0");
  need(!c.layers.empty(), "layers must not be empty");
  for (int l : c.layers) {
    if (l < 1 || l > enc.depth()) {
      throw backbone::LayerSelectionError("layer " + std::to_string(l) + " outside 1.." +
                                          std::to_string(enc.depth()));
    }
  }
  const int extra = (c.effective_style() == ecpl::PromptStyle::ecpl ||
                     c.effective_style() == ecpl::PromptStyle::cocoop) ? 1 : 0;
  const int ctx = c.effective_style() == ecpl::PromptStyle::handcrafted ? 0 : c.prompt_length;
  need(extra + ctx + 2 <= enc.max_prompt_length(), "prompt does not fit the text context");
}

double classification_loss(const Matrix& cls, const Matrix& t_real, const Matrix& t_fake, int label,
                           double logit_scale) {
  const double cn = cls.norm();
  const double lr = logit_scale * cls.cwiseProduct(t_real).sum() / (cn * t_real.norm());
  const double lf = logit_scale * cls.cwiseProduct(t_fake).sum() / (cn * t_fake.norm());
  const double m = std::max(lr, lf);
  const double lse = m + std::log(std::exp(lr - m) + std::exp(lf - m));
  return std::max(0.0, lse - (label == 1 ? lf : lr));
}

Var classification_loss(Tape&, const Var& cls, const Var& t_real, const Var& t_fake, int label,
                        double logit_scale) {
  using namespace ag;
  if (label != 0 && label != 1) throw std::invalid_argument("label must be 0 or 1");
  const Var texts[] = {t_real, t_fake};
  Var logits = scale(matmul_nt(l2_normalize_rows(cls), l2_normalize_rows(concat_rows(texts))), logit_scale);
  return sub(logsumexp_rows(logits), element(logits, 0, label));
}

double schedule_weight(long t, long total, double w_max) {
  if (total <= 0) throw std::invalid_argument("total steps must be positive");
  if (t < 0 || t > total) throw std::invalid_argument("step outside [0, T]");
  return w_max * double(t) / double(total);
}

double total_loss(double cls_loss, double hecl_loss, long t, long total, double w_max) {
  return cls_loss + schedule_weight(t, total, w_max) * hecl_loss;
}

PreparedSample prepare(const corpus::Sample& s, const backbone::DualEncoder& enc,
                       const softedge::SoftEdgeOptions& edge) {
  corpus::validate(s);
  const int frame = enc.config().frame;
  corpus::PreprocessedSample p = corpus::preprocess(s, frame);
  PreparedSample out;
  out.id = s.id;
  out.label = s.label;
  out.mask = s.mask;
  out.patches = enc.patchify(p);
  out.valid = p.valid_region;
  out.source_height = s.image.height();
  out.source_width = s.image.width();
  softedge::SoftEdgeMap em = softedge::soft_edge_map_in_region(p.frame, p.valid_region, edge);
  RealGrid g = softedge::resample_to_grid(em.values, enc.grid(), enc.config().footprint());
  out.edge = Eigen::Map<const Matrix>(g.data().data(), Index(g.size()), 1);
  return out;
}

Model::Model(backbone::DualEncoder& backbone, const TrainConfig& config)
    : backbone_(&backbone), config_(config) {
  validate(config_, backbone);
  Rng root(config_.seed);
  backbone.reset_lora(root.fork(1).next());
  bank = ecpl::make_prompt_bank(backbone, config_.prompt_length, root.fork(2).next());
  generator = ecpl::EdgePromptGenerator(backbone.joint_dim(), backbone.text_width(), config_.attention_heads,
                                        root.fork(3).next());
  for (int l : config_.layers) {
    heads.emplace(l, hecl::make_projection_head(l, backbone.joint_dim(), config_.contrast_dim,
                                                root.fork(100 + l).next()));
  }
}

std::vector<Parameter*> Model::trainable_parameters() {
  std::vector<Parameter*> out = backbone_->lora_parameters();
  const auto style = config_.effective_style();
  if (style != ecpl::PromptStyle::handcrafted) {
    out.push_back(&bank.ctx_real);
    out.push_back(&bank.ctx_fake);
  }
  if (style == ecpl::PromptStyle::ecpl) {
    for (Parameter* p : generator.parameters()) out.push_back(p);
  } else if (style == ecpl::PromptStyle::cocoop) {
    for (Parameter* p : {&generator.q_w, &generator.q_b, &generator.o_w, &generator.o_b}) out.push_back(p);
  }
  if (config_.hecl) {
    for (auto& [l, h] : heads) out.push_back(&h.weight);
  }
  return out;
}

std::vector<std::string> Model::trainable_names() {
  std::vector<std::string> out;
  for (Parameter* p : trainable_parameters()) out.push_back(p->name);
  return out;
}

Forward Model::forward(Tape& tape, const PreparedSample& s) {
  using namespace ag;
  Forward f;
  f.pyramid = backbone_->encode_image(tape, s.patches, config_.layers);
  f.cls = l2_normalize_rows(f.pyramid.cls);
  const auto style = config_.effective_style();
  Var token;
  if (style == ecpl::PromptStyle::ecpl) {
    std::vector<Var> feats;
    for (auto& [l, v] : f.pyramid.per_layer) feats.push_back(v);
    const Matrix edge = config_.ecpl_edge ? s.edge : Matrix::Ones(s.edge.rows(), 1);
    token = generator.forward(tape, f.pyramid.cls, feats, edge).token;
  } else if (style == ecpl::PromptStyle::cocoop) {
    token = generator.class_conditioned(tape, f.pyramid.cls);
  }
  auto [real, fake] = ecpl::build_prompts(tape, bank, token, style);
  f.t_real = backbone_->encode_text(tape, real);
  f.t_fake = backbone_->encode_text(tape, fake);
  return f;
}

Archive Model::checkpoint() const {
  Archive a;
  auto& self = const_cast<Model&>(*this);
  for (Parameter* p : self.trainable_parameters()) a.arrays[p->name] = p->value;
  a.meta["backbone.name"] = backbone_->config().name;
  a.meta["backbone.hash"] = std::to_string(backbone_->config().hash());
  a.meta["prompt_style"] = ecpl::to_string(config_.effective_style());
  std::ostringstream layers;
  for (int l : config_.layers) layers << l << ' ';
  a.meta["layers"] = layers.str();
  return a;
}

void Model::load_checkpoint(const Archive& a) {
  auto meta = [&](const std::string& k) {
    auto it = a.meta.find(k);
    if (it == a.meta.end()) throw CheckpointError("checkpoint lacks metadata key " + k);
    return it->second;
  };
  if (meta("backbone.hash") != std::to_string(backbone_->config().hash())) {
    throw CheckpointError("checkpoint was trained on backbone '" + meta("backbone.name") +
                          "', incompatible with '" + backbone_->config().name + "'");
  }
  if (meta("prompt_style") != ecpl::to_string(config_.effective_style())) {
    throw CheckpointError("checkpoint prompt style " + meta("prompt_style") + " differs from config " +
                          ecpl::to_string(config_.effective_style()));
  }
  for (Parameter* p : trainable_parameters()) {
    auto it = a.arrays.find(p->name);
    if (it == a.arrays.end()) throw CheckpointError("checkpoint lacks parameter " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw CheckpointError("checkpoint parameter " + p->name + " has the wrong shape");
    }
    p->value = it->second;
  }
}

void Model::save(const fs::path& path) const { checkpoint().save(path); }

void Model::load(const fs::path& path) {
  try {
    load_checkpoint(Archive::load(path));
  } catch (const ArchiveError& e) {
    throw CheckpointError(e.what());
  }
}

namespace {

bool finite(double v) { return std::isfinite(v); }

nlohmann::json config_json(const TrainConfig& c, const backbone::BackboneConfig& b) {
  nlohmann::json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["w_max"] = c.w_max;
  j["prompt_length"] = c.prompt_length;
  j["queue_length"] = c.queue_length;
  j["top_k"] = c.top_k;
  j["tau"] = c.tau;
  j["layers"] = std::vector<int>(c.layers.begin(), c.layers.end());
  j["contrast_dim"] = c.contrast_dim;
  j["attention_heads"] = c.attention_heads;
  j["warmup"] = c.warmup;
  j["grad_clip"] = c.grad_clip;
  j["seed"] = c.seed;
  j["ecpl"] = c.ecpl;
  j["hecl"] = c.hecl;
  j["ecpl_edge"] = c.ecpl_edge;
  j["hecl_edge"] = c.hecl_edge;
  j["prompt_style"] = ecpl::to_string(c.prompt_style);
  j["backbone"] = b.describe();
  return j;
}

}  // namespace

SampleLoss sample_loss(Tape& tape, Model& model, const PreparedSample& s, const hecl::QueueSnapshot& queues,
                       double w, bool contrast) {
  using namespace ag;
  const TrainConfig& cfg = model.config();
  Forward f = model.forward(tape, s);
  SampleLoss out;
  out.classification =
      classification_loss(tape, f.cls, f.t_real, f.t_fake, s.label, model.backbone().config().logit_scale);
  out.total = out.classification;
  if (!cfg.hecl) return out;
  const Matrix edge = cfg.hecl_edge ? s.edge : Matrix::Ones(s.edge.rows(), 1);
  std::vector<hecl::LayerSelection> sels;
  for (auto& [l, feats] : f.pyramid.per_layer) {
    hecl::SimilarityMaps maps = hecl::similarity_map(feats.value(), f.pyramid.grid, f.t_fake.value(), f.t_real.value());
    maps = hecl::confidence_maps(maps, model.backbone().config().logit_scale);
    hecl::SelectedEdgePatches sel = hecl::select_edge_patches(maps.pos, maps.neg, edge, feats.value(), cfg.top_k, l);
    sels.push_back({gather_rows(feats, sel.pos_indices), gather_rows(feats, sel.neg_indices), l});
  }
  hecl::HeclOutput h = hecl::hecl_loss(tape, sels, model.heads, queues, cfg.tau, s.label, contrast);
  if (h.loss.valid()) {
    out.contrastive = h.loss.scalar();
    out.total = add(out.total, scale(h.loss, w));
  }
  out.to_pos = std::move(h.z_to_pos);
  out.to_neg = std::move(h.z_to_neg);
  return out;
}

TrainResult train(Model& model, const std::vector<PreparedSample>& data, const TrainOptions& options) {
  using namespace ag;
  const TrainConfig& cfg = model.config();
  backbone::DualEncoder& enc = model.backbone();
  if (data.empty()) throw TrainingError("training set is empty");
  const bool has0 = std::any_of(data.begin(), data.end(), [](const auto& s) { return s.label == 0; });
  const bool has1 = std::any_of(data.begin(), data.end(), [](const auto& s) { return s.label == 1; });
  if (!has0 || !has1) throw TrainingError("training set must contain both authentic and manipulated images");

  std::vector<Parameter*> params = model.trainable_parameters();
  AdamW opt(params, AdamW::Options{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  hecl::EmbeddingQueue queue_pos(std::size_t(cfg.queue_length), hecl::Polarity::pos, cfg.contrast_dim);
  hecl::EmbeddingQueue queue_neg(std::size_t(cfg.queue_length), hecl::Polarity::neg, cfg.contrast_dim);

  const long batches_per_epoch = long((data.size() + cfg.batch_size - 1) / cfg.batch_size);
  const long total_steps = batches_per_epoch * cfg.epochs;

  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);
  nlohmann::json manifest;
  manifest["config"] = config_json(cfg, enc.config());
  manifest["seed"] = cfg.seed;
  manifest["version"] = SAPL_VERSION;
  manifest["trainable"] = model.trainable_names();
  manifest["samples"] = data.size();
  for (const auto& [k, v] : options.manifest_extra) manifest["extra"][k] = v;
  manifest["epochs"] = nlohmann::json::array();

  TrainResult result;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_root(cfg.seed ^ 0x5ee0u);
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuf = shuffle_root.fork(std::uint64_t(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[std::size_t(shuf.uniform_int(0, int(i - 1)))]);

    EpochRecord rec;
    rec.epoch = epoch;
    double epoch_loss = 0, epoch_cls = 0, epoch_hecl = 0;
    for (long b = 0; b < batches_per_epoch; ++b, ++step) {
      const std::size_t lo = std::size_t(b) * cfg.batch_size;
      const std::size_t hi = std::min(order.size(), lo + std::size_t(cfg.batch_size));
      const double inv_b = 1.0 / double(hi - lo);
      const double w = schedule_weight(step, total_steps, cfg.w_max);
      const bool contrast = cfg.hecl && int(queue_pos.size()) >= std::max(1, cfg.warmup) &&
                            int(queue_neg.size()) >= std::max(1, cfg.warmup);
      hecl::QueueSnapshot snap;
      if (contrast) snap = {queue_pos.snapshot(), queue_neg.snapshot()};
      opt.zero_grad();
      std::vector<Matrix> to_pos, to_neg;
      double batch_loss = 0, batch_cls = 0, batch_hecl = 0;
      for (std::size_t j = lo; j < hi; ++j) {
        const PreparedSample& s = data[order[j]];
        Tape tape;
        SampleLoss sl = sample_loss(tape, model, s, snap, w, contrast);
        Var loss = sl.total;
        Var cls_loss = sl.classification;
        const double hecl_value = sl.contrastive;
        if (cfg.hecl) {
          to_pos.push_back(std::move(sl.to_pos));
          to_neg.push_back(std::move(sl.to_neg));
        }
        const double lv = loss.scalar();
        if (!finite(lv)) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch << ", step " << step << ", sample '" << s.id
              << "' (classification " << cls_loss.scalar() << ", contrastive " << hecl_value << ", weight " << w
              << ")";
          throw TrainingError(msg.str());
        }
        tape.backward(loss, inv_b);
        batch_loss += lv * inv_b;
        batch_cls += cls_loss.scalar() * inv_b;
        batch_hecl += hecl_value * inv_b;
      }
      const double norm = clip_grad_norm(params, cfg.grad_clip);
      if (!finite(norm)) {
        throw TrainingError("non-finite gradient norm at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step));
      }
      opt.step();
      for (const Matrix& m : to_pos) queue_pos.push(m);
      for (const Matrix& m : to_neg) queue_neg.push(m);
      result.step_losses.push_back(batch_loss);
      epoch_loss += batch_loss;
      epoch_cls += batch_cls;
      epoch_hecl += batch_hecl;
      if (contrast) ++rec.hecl_steps;
    }
    rec.loss = epoch_loss / double(batches_per_epoch);
    rec.cls_loss = epoch_cls / double(batches_per_epoch);
    rec.hecl_loss = rec.hecl_steps ? epoch_hecl / double(rec.hecl_steps) : 0.0;
    if (!options.out_dir.empty()) {
      rec.checkpoint = options.out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".sapl");
      model.save(rec.checkpoint);
    }
    nlohmann::json e;
    e["epoch"] = epoch;
    e["loss"] = rec.loss;
    e["cls_loss"] = rec.cls_loss;
    e["hecl_loss"] = rec.hecl_loss;
    e["hecl_steps"] = rec.hecl_steps;
    e["checkpoint"] = rec.checkpoint.filename().string();
    manifest["epochs"].push_back(e);
    if (!options.out_dir.empty()) {
      result.manifest = options.out_dir / "manifest.json";
      std::ofstream(result.manifest) << manifest.dump(2) << '\n';
    }
    result.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  return result;
}

TrainResult train(Model& model, const std::vector<corpus::Sample>& data, const TrainOptions& options) {
  std::vector<PreparedSample> prepared;
  prepared.reserve(data.size());
  for (const auto& s : data) prepared.push_back(prepare(s, model.backbone(), model.config().edge));
  return train(model, prepared, options);
}

Matrix aggregate_layers(const std::vector<Matrix>& maps) {
  if (maps.empty()) throw std::invalid_argument("no layer maps to aggregate");
  Matrix acc = Matrix::Zero(maps[0].rows(), maps[0].cols());
  for (const Matrix& m : maps) {
    if (m.rows() != acc.rows() || m.cols() != acc.cols()) throw std::invalid_argument("layer maps differ in shape");
    acc += m;
  }
  return acc / double(maps.size());
}

RealGrid heatmap_to_source(const Matrix& grid_map, int frame, const Rect& valid, int height, int width) {
  RealGrid g(int(grid_map.rows()), int(grid_map.cols()));
  std::copy(grid_map.data(), grid_map.data() + grid_map.size(), g.data().begin());
  RealGrid up = resize_bilinear(g, frame, frame);
  RealGrid crop(valid.height, valid.width);
  for (int y = 0; y < valid.height; ++y)
    for (int x = 0; x < valid.width; ++x) crop(y, x) = up(valid.top + y, valid.left + x);
  RealGrid out = resize_bilinear(crop, height, width);
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

LocalizationResult localize(Model& model, const PreparedSample& s) {
  Tape tape;
  Forward f = model.forward(tape, s);
  const double ls = model.backbone().config().logit_scale;
  const int g = f.pyramid.grid;
  Eigen::RowVectorXd tr = f.t_real.value().row(0).normalized();
  Eigen::RowVectorXd tf = f.t_fake.value().row(0).normalized();
  LocalizationResult out;
  std::vector<Matrix> maps;
  for (auto& [l, v] : f.pyramid.per_layer) {
    Matrix m = hecl::confidence_maps(hecl::similarity_map(v.value(), g, tf, tr), ls).pos;
    out.per_layer_maps[l] = m;
    maps.push_back(std::move(m));
  }
  out.heatmap = heatmap_to_source(aggregate_layers(maps), model.backbone().config().frame, s.valid,
                                  s.source_height, s.source_width);
  Eigen::RowVectorXd c = f.cls.value().row(0);
  const double sr = c.dot(tr), sf = c.dot(tf);
  out.score = 1.0 / (1.0 + std::exp(-ls * (sf - sr)));
  out.label = sf > sr ? 1 : 0;
  return out;
}

LocalizationResult localize(Model& model, const corpus::Sample& s) {
  return localize(model, prepare(s, model.backbone(), model.config().edge));
}

void write_heatmap(const fs::path& path, const RealGrid& map) {
  static_assert(std::endian::native == std::endian::little, "heatmap I/O assumes a little-endian host");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write heatmap " + path.string());
  const std::uint32_t dims[2] = {std::uint32_t(map.height()), std::uint32_t(map.width())};
  f.write("SAPLMAP1", 8);
  f.write(reinterpret_cast<const char*>(dims), sizeof dims);
  std::vector<float> buf(map.data().begin(), map.data().end());
  f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("failed writing heatmap " + path.string());
}

RealGrid read_heatmap(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read heatmap " + path.string());
  char magic[8];
  std::uint32_t dims[2];
  f.read(magic, 8);
  f.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!f || std::memcmp(magic, "SAPLMAP1", 8) != 0) throw std::runtime_error("not a heatmap file: " + path.string());
  std::vector<float> buf(std::size_t(dims[0]) * dims[1]);
  f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("truncated heatmap " + path.string());
  RealGrid out(static_cast<int>(dims[0]), static_cast<int>(dims[1]));
  std::copy(buf.begin(), buf.end(), out.data().begin());
  return out;
}

void write_heatmap_preview(const fs::path& path, const RealGrid& map) {
  Mask m(map.height(), map.width());
  for (std::size_t i = 0; i < map.size(); ++i)
    m.data()[i] = std::uint8_t(std::lround(255.0 * std::clamp(map.data()[i], 0.0, 1.0)));
  write_gray_png(path, m);
}

}  // namespace sapl::pipeline

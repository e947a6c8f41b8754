#include "sapl/backbone.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "sapl/rng.hpp"

namespace sapl::backbone {
namespace {

constexpr std::array<double, 3> kMean{0.48145466, 0.4578275, 0.40821073};
constexpr std::array<double, 3> kStd{0.26862954, 0.26130258, 0.27577711};
// Normalisation of the |x - box3(x)| stem channel, on the [0,1] gray scale.
constexpr double kResidualMean = 0.005;
constexpr double kResidualStd = 0.01;

// Shape-only allocation (std < 0) skips sampling when weights will be loaded.
Matrix gaussian(Rng& rng, int rows, int cols, double std) {
  if (std < 0) return Matrix::Zero(rows, cols);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, std);
  return m;
}

Parameter frozen(std::string name, Matrix v) { return Parameter(std::move(name), std::move(v), false); }

void init_block(Block& b, int d, int mlp, Rng& rng, const std::string& prefix, bool sample) {
  const double s = sample ? 1.0 / std::sqrt(double(d)) : -1.0;
  b.ln1_g = frozen(prefix + ".ln_1.weight", Matrix::Ones(1, d));
  b.ln1_b = frozen(prefix + ".ln_1.bias", Matrix::Zero(1, d));
  b.in_w = frozen(prefix + ".attn.in_proj_weight", gaussian(rng, d, 3 * d, s));
  b.in_b = frozen(prefix + ".attn.in_proj_bias", Matrix::Zero(1, 3 * d));
  b.out_w = frozen(prefix + ".attn.out_proj.weight", gaussian(rng, d, d, s));
  b.out_b = frozen(prefix + ".attn.out_proj.bias", Matrix::Zero(1, d));
  b.ln2_g = frozen(prefix + ".ln_2.weight", Matrix::Ones(1, d));
  b.ln2_b = frozen(prefix + ".ln_2.bias", Matrix::Zero(1, d));
  b.fc_w = frozen(prefix + ".mlp.c_fc.weight", gaussian(rng, d, mlp * d, s));
  b.fc_b = frozen(prefix + ".mlp.c_fc.bias", gaussian(rng, 1, mlp * d, sample ? 0.5 : -1.0));
  b.proj_w = frozen(prefix + ".mlp.c_proj.weight", gaussian(rng, mlp * d, d, sample ? 1.0 / std::sqrt(double(mlp * d)) : -1.0));
  b.proj_b = frozen(prefix + ".mlp.c_proj.bias", Matrix::Zero(1, d));
}

void block_params(Block& b, std::vector<Parameter*>& out) {
  for (Parameter* p : {&b.ln1_g, &b.ln1_b, &b.in_w, &b.in_b, &b.out_w, &b.out_b, &b.ln2_g, &b.ln2_b, &b.fc_w,
                       &b.fc_b, &b.proj_w, &b.proj_b}) {
    out.push_back(p);
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

const std::vector<std::string>& toy_vocab() {
  static const std::vector<std::string> v{"<sot>",   "<eot>", "real", "fake",       "image",     "a",
                                          "photo",   "of",    "the",  "authentic", "tampered", "manipulated",
                                          "picture", "edge",  "region"};
  return v;
}

double cubic(double x, double a = -0.75) {
  x = std::abs(x);
  if (x <= 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
  if (x < 2) return (((x - 5) * x + 8) * x - 4) * a;
  return 0;
}

}  // namespace

std::string BackboneConfig::describe() const {
  std::ostringstream os;
  os << "name=" << name << ";frame=" << frame << ";vision=" << vision.stem_pool << "/" << vision.patch << "/"
     << vision.width << "/" << vision.layers << "/" << vision.heads << "/" << vision.mlp_ratio << "/"
     << vision.weight_grid << "/" << vision.residual_channel << "/" << vision.attention_radius << ";text=" << text.width << "/" << text.layers << "/" << text.heads << "/"
     << text.mlp_ratio << "/" << text.context_length << ";lora=" << lora.rank << "/" << lora.alpha
     << ";joint=" << joint_dim << ";logit_scale=" << logit_scale << ";seed=" << seed;
  return os.str();
}

std::uint64_t BackboneConfig::hash() const { return fnv1a(describe()); }

BackboneConfig toy_config() { return BackboneConfig{}; }

BackboneConfig vit_l14_336_config() {
  BackboneConfig c;
  c.name = "vit-l-14-336";
  c.vision = VisionConfig{1, 14, 1024, 24, 16, 4, 24, false, 0};
  c.text = TextConfig{768, 12, 12, 4, 77};
  c.joint_dim = 768;
  c.logit_scale = 100.0;
  return c;
}

LoRAAdapter make_lora(const std::string& name, int dim, const LoraConfig& cfg, std::uint64_t seed) {
  if (cfg.rank < 1) throw std::invalid_argument("LoRA rank must be >= 1");
  Rng rng(seed);
  LoRAAdapter a;
  a.rank = cfg.rank;
  a.scale = cfg.alpha / cfg.rank;
  const double bound = 1.0 / std::sqrt(double(dim));
  Matrix down(cfg.rank, dim);
  for (Eigen::Index i = 0; i < down.size(); ++i) down.data()[i] = rng.uniform(-bound, bound);
  a.down = Parameter(name + ".down", std::move(down), true);
  a.up = Parameter(name + ".up", Matrix::Zero(dim, cfg.rank), true);
  return a;
}

Eigen::VectorXd apply_lora(const Eigen::VectorXd& frozen_out, const Eigen::VectorXd& input, const Matrix& down,
                           const Matrix& up, double scale) {
  if (down.cols() != input.size() || up.rows() != frozen_out.size() || up.cols() != down.rows()) {
    throw std::invalid_argument("apply_lora: dimension mismatch");
  }
  return frozen_out + scale * (up * (down * input));
}

Var lora_delta(Tape& tape, const Var& x, LoRAAdapter& adapter) {
  Var h = ag::matmul_nt(x, tape.param(adapter.down));  // n x r
  return ag::scale(ag::matmul_nt(h, tape.param(adapter.up)), adapter.scale);
}

Matrix interpolate_pos_grid(const Matrix& grid_rows, int src, int dst) {
  if (grid_rows.rows() != Eigen::Index(src) * src) throw std::invalid_argument("interpolate_pos_grid: bad rows");
  if (src == dst) return grid_rows;
  const Eigen::Index d = grid_rows.cols();
  Matrix out = Matrix::Zero(Eigen::Index(dst) * dst, d);
  const double s = double(src) / dst;
  auto taps = [&](int o, std::array<int, 4>& idx, std::array<double, 4>& w) {
    const double u = (o + 0.5) * s - 0.5;
    const int base = int(std::floor(u));
    const double t = u - base;
    for (int k = 0; k < 4; ++k) {
      idx[k] = std::clamp(base - 1 + k, 0, src - 1);
      w[k] = cubic(t - (k - 1));
    }
  };
  for (int y = 0; y < dst; ++y) {
    std::array<int, 4> iy;
    std::array<double, 4> wy;
    taps(y, iy, wy);
    for (int x = 0; x < dst; ++x) {
      std::array<int, 4> ix;
      std::array<double, 4> wx;
      taps(x, ix, wx);
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) out.row(y * dst + x) += wy[a] * wx[b] * grid_rows.row(iy[a] * src + ix[b]);
    }
  }
  return out;
}

DualEncoder::DualEncoder(const BackboneConfig& config) : config_(config) {
  allocate();
  init_frozen(true);
}

void DualEncoder::allocate() {
  attention_mask_ = Matrix();
  if (const int r = config_.vision.attention_radius; r > 0) {
    const int g = grid();
    const Eigen::Index n = Eigen::Index(g) * g + 1;
    attention_mask_ = Matrix::Zero(n, n);
    attention_mask_.row(0).setOnes();
    for (Eigen::Index i = 1; i < n; ++i) {
      const int yi = int(i - 1) / g, xi = int(i - 1) % g;
      for (Eigen::Index j = 1; j < n; ++j) {
        const int yj = int(j - 1) / g, xj = int(j - 1) % g;
        if (std::abs(yi - yj) <= r && std::abs(xi - xj) <= r) attention_mask_(i, j) = 1;
      }
    }
  }
  vis_blocks_.resize(config_.vision.layers);
  txt_blocks_.resize(config_.text.layers);
  reset_lora(config_.seed);
}

void DualEncoder::reset_lora(std::uint64_t seed) {
  lora_.clear();
  lora_.reserve(2 * config_.vision.layers);
  for (int i = 0; i < config_.vision.layers; ++i) {
    for (const char* which : {"q", "v"}) {
      lora_.push_back(make_lora("lora.block" + std::to_string(i) + "." + which, config_.vision.width, config_.lora,
                                seed * 7919 + 2 * i + (which[0] == 'v')));
    }
  }
}

void DualEncoder::init_frozen(bool sample) {
  const auto& v = config_.vision;
  const auto& t = config_.text;
  Rng rng(config_.seed);
  const int g = grid();
  const int patch_dim = v.patch * v.patch * channels();
  auto sd = [sample](double s) { return sample ? s : -1.0; };
  const double sv = sd(1.0 / std::sqrt(double(v.width)));
  conv_w_ = frozen("visual.conv1.weight", gaussian(rng, patch_dim, v.width, sd(1.0 / std::sqrt(double(patch_dim)))));
  class_emb_ = frozen("visual.class_embedding", gaussian(rng, 1, v.width, sv));
  vis_pos_ = frozen("visual.positional_embedding", gaussian(rng, g * g + 1, v.width, sd(0.1)));
  ln_pre_g_ = frozen("visual.ln_pre.weight", Matrix::Ones(1, v.width));
  ln_pre_b_ = frozen("visual.ln_pre.bias", Matrix::Zero(1, v.width));
  for (int i = 0; i < v.layers; ++i) {
    init_block(vis_blocks_[i], v.width, v.mlp_ratio, rng, "visual.transformer.resblocks." + std::to_string(i), sample);
  }
  ln_post_g_ = frozen("visual.ln_post.weight", Matrix::Ones(1, v.width));
  ln_post_b_ = frozen("visual.ln_post.bias", Matrix::Zero(1, v.width));
  vis_proj_ = frozen("visual.proj", gaussian(rng, v.width, config_.joint_dim, sv));

  vocab_ = toy_vocab();
  tok_emb_ = frozen("token_embedding.weight", gaussian(rng, int(vocab_.size()), t.width, sd(0.02)));
  txt_pos_ = frozen("positional_embedding", gaussian(rng, t.context_length, t.width, sd(0.01)));
  for (int i = 0; i < t.layers; ++i) {
    init_block(txt_blocks_[i], t.width, t.mlp_ratio, rng, "transformer.resblocks." + std::to_string(i), sample);
  }
  ln_final_g_ = frozen("ln_final.weight", Matrix::Ones(1, t.width));
  ln_final_b_ = frozen("ln_final.bias", Matrix::Zero(1, t.width));
  txt_proj_ = frozen("text_projection", gaussian(rng, t.width, config_.joint_dim, sd(1.0 / std::sqrt(double(t.width)))));
  vocab_index_.clear();
  for (size_t i = 0; i < vocab_.size(); ++i) vocab_index_[vocab_[i]] = int(i);
  sot_ = vocab_index_.at("<sot>");
  eot_ = vocab_index_.at("<eot>");
}

std::vector<std::pair<std::string, Parameter*>> DualEncoder::named_frozen() {
  std::vector<std::pair<std::string, Parameter*>> out;
  for (Parameter* p : frozen_parameters()) out.emplace_back(p->name, p);
  return out;
}

std::vector<Parameter*> DualEncoder::frozen_parameters() {
  std::vector<Parameter*> out{&conv_w_, &class_emb_, &vis_pos_, &ln_pre_g_, &ln_pre_b_};
  for (auto& b : vis_blocks_) block_params(b, out);
  for (Parameter* p : {&ln_post_g_, &ln_post_b_, &vis_proj_, &tok_emb_, &txt_pos_}) out.push_back(p);
  for (auto& b : txt_blocks_) block_params(b, out);
  for (Parameter* p : {&ln_final_g_, &ln_final_b_, &txt_proj_}) out.push_back(p);
  return out;
}

std::vector<Parameter*> DualEncoder::lora_parameters() {
  std::vector<Parameter*> out;
  for (auto& a : lora_) {
    out.push_back(&a.down);
    out.push_back(&a.up);
  }
  return out;
}

Archive DualEncoder::export_weights() const {
  Archive a;
  auto* self = const_cast<DualEncoder*>(this);
  for (auto& [name, p] : self->named_frozen()) a.arrays[name] = p->value;
  std::string vocab;
  for (const auto& w : vocab_) vocab += w + "\n";
  a.meta["text.vocab"] = vocab;
  a.meta["backbone"] = config_.describe();
  return a;
}

DualEncoder DualEncoder::from_archive(const BackboneConfig& config, const std::filesystem::path& weights) {
  DualEncoder enc;
  enc.config_ = config;
  enc.allocate();
  enc.init_frozen(false);
  enc.load(Archive::load(weights));
  return enc;
}

void DualEncoder::load(const Archive& a) {
  const int g = grid();
  for (auto& [name, p] : named_frozen()) {
    const Matrix& src = a.array(name);
    if (name == "visual.positional_embedding" && src.rows() != p->value.rows()) {
      const int wg = config_.vision.weight_grid;
      if (wg <= 0 || src.rows() != Eigen::Index(wg) * wg + 1 || src.cols() != p->value.cols()) {
        throw ArchiveError("positional embedding shape does not match configured weight grid");
      }
      Matrix out(g * g + 1, src.cols());
      out.row(0) = src.row(0);
      out.bottomRows(g * g) = interpolate_pos_grid(src.bottomRows(Eigen::Index(wg) * wg), wg, g);
      p->value = std::move(out);
      continue;
    }
    const bool vocab_sized = name == "token_embedding.weight";
    if ((!vocab_sized && src.rows() != p->value.rows()) || src.cols() != p->value.cols()) {
      throw ArchiveError("shape mismatch for " + name);
    }
    p->value = src;
  }
  std::istringstream vs(a.get_meta("text.vocab"));
  vocab_.clear();
  for (std::string w; std::getline(vs, w);) vocab_.push_back(w);
  if (Eigen::Index(vocab_.size()) != tok_emb_.value.rows()) throw ArchiveError("vocab size does not match embedding");
  vocab_index_.clear();
  for (size_t i = 0; i < vocab_.size(); ++i) vocab_index_[vocab_[i]] = int(i);
  auto special = [&](std::initializer_list<const char*> names) {
    for (const char* n : names) {
      if (auto it = vocab_index_.find(n); it != vocab_index_.end()) return it->second;
    }
    throw ArchiveError("vocab lacks start/end tokens");
  };
  sot_ = special({"<sot>", "<|startoftext|>"});
  eot_ = special({"<eot>", "<|endoftext|>"});
}

int DualEncoder::token_id(const std::string& word) const {
  if (auto it = vocab_index_.find(word + "</w>"); it != vocab_index_.end()) return it->second;
  if (auto it = vocab_index_.find(word); it != vocab_index_.end()) return it->second;
  throw std::invalid_argument("word not in vocabulary: " + word);
}

std::vector<int> DualEncoder::tokenize(const std::string& words) const {
  std::istringstream is(words);
  std::vector<int> out;
  for (std::string w; is >> w;) out.push_back(token_id(w));
  return out;
}

Matrix DualEncoder::patchify(const corpus::PreprocessedSample& s) const {
  const int pool = config_.vision.stem_pool, p = config_.vision.patch, g = grid();
  if (s.pixels.height() != config_.frame || s.pixels.width() != config_.frame) {
    throw std::invalid_argument("patchify: input is not a preprocessed frame");
  }
  const int side = g * p;
  const double inv_area = 1.0 / (pool * pool);
  Image<double> pooled(side, side, 3);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int dy = 0; dy < pool; ++dy)
          for (int dx = 0; dx < pool; ++dx) acc += s.pixels(y * pool + dy, x * pool + dx, c);
        pooled(y, x, c) = acc * inv_area;
      }

  const int ch = channels();
  RealGrid residual;
  if (config_.vision.residual_channel) {
    // High-pass on the full-resolution frame, then pooled, so pixel-level
    // noise survives the stem downsampling.
    const int n = config_.frame;
    RealGrid gray(n, n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) gray(y, x) = (s.pixels(y, x, 0) + s.pixels(y, x, 1) + s.pixels(y, x, 2)) / 3.0;
    residual = RealGrid(side, side, 1, 0.0);
    for (int y = 0; y < side * pool; ++y)
      for (int x = 0; x < side * pool; ++x) {
        double acc = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) acc += gray(std::clamp(y + dy, 0, n - 1), std::clamp(x + dx, 0, n - 1));
        residual(y / pool, x / pool) += std::abs(gray(y, x) - acc / 9.0) * inv_area;
      }
    for (double& v : residual.data()) v = (v - kResidualMean) / kResidualStd;
  }

  Matrix out(g * g, p * p * ch);
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      auto row = out.row(gy * g + gx);
      for (int py = 0; py < p; ++py) {
        for (int px = 0; px < p; ++px) {
          const int y = gy * p + py, x = gx * p + px;
          for (int c = 0; c < 3; ++c) row((py * p + px) * ch + c) = (pooled(y, x, c) - kMean[c]) / kStd[c];
          if (ch == 4) row((py * p + px) * ch + 3) = residual(y, x);
        }
      }
    }
  }
  return out;
}

Var DualEncoder::run_block(Tape& tape, const Var& x, Block& b, int heads, bool causal, LoRAAdapter* lq,
                           LoRAAdapter* lv, const Matrix* mask) {
  using namespace ag;
  const Index d = x.cols();
  const Index dh = d / heads;
  Var h = layer_norm(x, tape.param(b.ln1_g), tape.param(b.ln1_b));
  Var qkv = linear(h, tape.param(b.in_w), tape.param(b.in_b));
  Var q = slice_cols(qkv, 0, d);
  Var k = slice_cols(qkv, d, d);
  Var v = slice_cols(qkv, 2 * d, d);
  if (lq) q = add(q, lora_delta(tape, h, *lq));
  if (lv) v = add(v, lora_delta(tape, h, *lv));
  std::vector<Var> outs;
  outs.reserve(heads);
  const double inv = 1.0 / std::sqrt(double(dh));
  for (int i = 0; i < heads; ++i) {
    Var qh = slice_cols(q, i * dh, dh), kh = slice_cols(k, i * dh, dh), vh = slice_cols(v, i * dh, dh);
    Var att = mask ? softmax_rows_masked(scale(matmul_nt(qh, kh), inv), *mask)
                   : softmax_rows(scale(matmul_nt(qh, kh), inv), causal);
    outs.push_back(matmul(att, vh));
  }
  Var o = heads == 1 ? outs[0] : concat_cols(outs);
  Var x1 = add(x, linear(o, tape.param(b.out_w), tape.param(b.out_b)));
  Var h2 = layer_norm(x1, tape.param(b.ln2_g), tape.param(b.ln2_b));
  Var m = linear(quick_gelu(linear(h2, tape.param(b.fc_w), tape.param(b.fc_b))), tape.param(b.proj_w),
                 tape.param(b.proj_b));
  return add(x1, m);
}

PyramidVars DualEncoder::encode_image(Tape& tape, const Matrix& patches, const std::set<int>& layers) {
  using namespace ag;
  for (int l : layers) {
    if (l < 1 || l > depth()) {
      throw LayerSelectionError("layer " + std::to_string(l) + " outside 1.." + std::to_string(depth()));
    }
  }
  const int g = grid();
  if (patches.rows() != Eigen::Index(g) * g) throw std::invalid_argument("encode_image: bad patch matrix");
  Var tokens = matmul(tape.constant_ref(patches), tape.param(conv_w_));
  std::array<Var, 2> parts{tape.param(class_emb_), tokens};
  Var x = add(concat_rows(parts), tape.param(vis_pos_));
  x = layer_norm(x, tape.param(ln_pre_g_), tape.param(ln_pre_b_));

  PyramidVars out;
  out.grid = g;
  Var post_g = tape.param(ln_post_g_), post_b = tape.param(ln_post_b_), proj = tape.param(vis_proj_);
  for (int i = 0; i < depth(); ++i) {
    x = run_block(tape, x, vis_blocks_[i], config_.vision.heads, false, &lora_[2 * i], &lora_[2 * i + 1],
                  attention_mask_.size() ? &attention_mask_ : nullptr);
    const int layer = i + 1;
    if (layers.count(layer)) {
      Var patch_tokens = slice_rows(x, 1, Index(g) * g);
      out.per_layer[layer] = matmul(layer_norm(patch_tokens, post_g, post_b), proj);
    }
  }
  out.cls = matmul(layer_norm(slice_rows(x, 0, 1), post_g, post_b), proj);
  return out;
}

PatchFeaturePyramid DualEncoder::encode_image(const corpus::PreprocessedSample& s, const std::set<int>& layers) {
  Tape tape;
  PyramidVars v = encode_image(tape, patchify(s), layers);
  PatchFeaturePyramid out;
  out.grid = v.grid;
  out.joint_dim = joint_dim();
  for (auto& [l, var] : v.per_layer) out.per_layer[l] = var.value();
  out.cls = v.cls.value();
  return out;
}

Var DualEncoder::encode_text(Tape& tape, const std::vector<PromptToken>& prompt) {
  using namespace ag;
  if (int(prompt.size()) > max_prompt_length()) {
    throw std::invalid_argument("prompt of length " + std::to_string(prompt.size()) + " exceeds context of " +
                                std::to_string(max_prompt_length()));
  }
  const Index w = text_width();
  std::vector<Var> rows;
  rows.reserve(prompt.size() + 2);
  auto embed = [&](int id) {
    if (id < 0 || id >= tok_emb_.value.rows()) throw std::invalid_argument("token id out of range");
    return tape.constant(tok_emb_.value.row(id));
  };
  rows.push_back(embed(sot_));
  for (const auto& t : prompt) {
    if (const Var* v = std::get_if<Var>(&t)) {
      if (v->rows() != 1 || v->cols() != w) throw std::invalid_argument("learnable prompt vector has wrong width");
      rows.push_back(*v);
    } else {
      rows.push_back(embed(std::get<int>(t)));
    }
  }
  rows.push_back(embed(eot_));
  const Index n = Index(rows.size());
  Var x = add(concat_rows(rows), tape.constant(txt_pos_.value.topRows(n)));
  for (auto& b : txt_blocks_) x = run_block(tape, x, b, config_.text.heads, true, nullptr, nullptr);
  x = layer_norm(slice_rows(x, n - 1, 1), tape.param(ln_final_g_), tape.param(ln_final_b_));
  return l2_normalize_rows(matmul(x, tape.param(txt_proj_)));
}

TextFeature DualEncoder::encode_text(const std::vector<int>& token_ids, TextClass cls) {
  Tape tape;
  std::vector<PromptToken> prompt(token_ids.begin(), token_ids.end());
  return TextFeature{encode_text(tape, prompt).value(), cls};
}

}  // namespace sapl::backbone

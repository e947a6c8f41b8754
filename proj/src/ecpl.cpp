#include "sapl/ecpl.hpp"

#include <cmath>

#include "sapl/rng.hpp"

namespace sapl::ecpl {
namespace {

Matrix gaussian(Rng& rng, int rows, int cols, double std) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, std);
  return m;
}

}  // namespace

PromptStyle parse_prompt_style(const std::string& s) {
  if (s == "handcrafted") return PromptStyle::handcrafted;
  if (s == "coop") return PromptStyle::coop;
  if (s == "cocoop") return PromptStyle::cocoop;
  if (s == "ecpl") return PromptStyle::ecpl;
  throw std::invalid_argument("unknown prompt style: " + s);
}

std::string to_string(PromptStyle s) {
  switch (s) {
    case PromptStyle::handcrafted: return "handcrafted";
    case PromptStyle::coop: return "coop";
    case PromptStyle::cocoop: return "cocoop";
    case PromptStyle::ecpl: return "ecpl";
  }
  return "?";
}

PromptBank make_prompt_bank(const backbone::DualEncoder& enc, int length, std::uint64_t seed) {
  if (length < 1) throw std::invalid_argument("prompt length must be >= 1");
  Rng rng(seed);
  PromptBank bank;
  bank.ctx_real = Parameter("ecpl.ctx_real", gaussian(rng, length, enc.text_width(), 0.02));
  bank.ctx_fake = Parameter("ecpl.ctx_fake", gaussian(rng, length, enc.text_width(), 0.02));
  bank.real_tokens = enc.tokenize("real image");
  bank.fake_tokens = enc.tokenize("fake image");
  return bank;
}

EdgePromptGenerator::EdgePromptGenerator(int joint_dim, int text_width, int heads, std::uint64_t seed)
    : heads_(heads) {
  if (heads < 1 || text_width % heads != 0) throw std::invalid_argument("attention heads must divide text width");
  Rng rng(seed);
  const double sj = 1.0 / std::sqrt(double(joint_dim));
  const double st = 1.0 / std::sqrt(double(text_width));
  q_w = Parameter("ecpl.attn.q_w", gaussian(rng, joint_dim, text_width, sj));
  q_b = Parameter("ecpl.attn.q_b", Matrix::Zero(1, text_width));
  p_w = Parameter("ecpl.attn.p_w", gaussian(rng, joint_dim, text_width, sj));
  p_b = Parameter("ecpl.attn.p_b", Matrix::Zero(1, text_width));
  o_w = Parameter("ecpl.attn.o_w", gaussian(rng, text_width, text_width, st));
  o_b = Parameter("ecpl.attn.o_b", Matrix::Zero(1, text_width));
}

std::vector<Parameter*> EdgePromptGenerator::parameters() { return {&q_w, &q_b, &p_w, &p_b, &o_w, &o_b}; }

EdgeAttention EdgePromptGenerator::forward(Tape& tape, const Var& cls, const std::vector<Var>& layer_features,
                                           const Matrix& edge) {
  using namespace ag;
  if (layer_features.empty()) throw std::invalid_argument("edge prompt needs at least one layer");
  const Index n = layer_features[0].rows();
  if (edge.rows() != n || edge.cols() != 1) throw std::invalid_argument("edge weights must be (G*G) x 1");
  Var summed = layer_features.size() == 1 ? layer_features[0] : add_n(layer_features);
  Var q = linear(cls, tape.param(q_w), tape.param(q_b));
  Var k = linear(summed, tape.param(p_w), tape.param(p_b));
  Var v = scale_rows(k, tape.constant(edge));
  const Index d = q.cols();
  const Index dh = d / heads_;
  const double inv = 1.0 / std::sqrt(double(dh));
  std::vector<Var> heads;
  heads.reserve(heads_);
  for (int h = 0; h < heads_; ++h) {
    Var att = softmax_rows(scale(matmul_nt(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh)), inv));
    heads.push_back(matmul(att, slice_cols(v, h * dh, dh)));
  }
  EdgeAttention out;
  out.pre_projection = heads_ == 1 ? heads[0] : concat_cols(heads);
  out.token = linear(out.pre_projection, tape.param(o_w), tape.param(o_b));
  return out;
}

Var EdgePromptGenerator::class_conditioned(Tape& tape, const Var& cls) {
  using namespace ag;
  return linear(linear(cls, tape.param(q_w), tape.param(q_b)), tape.param(o_w), tape.param(o_b));
}

EdgePromptToken EdgePromptGenerator::generate(const backbone::PatchFeaturePyramid& pyramid, const Matrix& edge,
                                              const std::string& id) {
  Tape tape;
  std::vector<Var> feats;
  for (const auto& [layer, m] : pyramid.per_layer) feats.push_back(tape.constant_ref(m));
  EdgeAttention a = forward(tape, tape.constant_ref(pyramid.cls), feats, edge);
  return EdgePromptToken{a.token.value(), id};
}

std::pair<std::vector<backbone::PromptToken>, std::vector<backbone::PromptToken>> build_prompts(
    Tape& tape, PromptBank& bank, const Var& edge_token, PromptStyle style) {
  std::vector<backbone::PromptToken> real, fake;
  const bool with_token = style == PromptStyle::ecpl || style == PromptStyle::cocoop;
  const bool with_ctx = style != PromptStyle::handcrafted;
  if (with_token) {
    if (!edge_token.valid()) throw std::invalid_argument("prompt style requires an image-conditioned token");
    if (edge_token.cols() != bank.ctx_real.value.cols()) throw std::invalid_argument("edge token width mismatch");
    real.emplace_back(edge_token);
    fake.emplace_back(edge_token);
  }
  if (with_ctx) {
    Var ctx_r = tape.param(bank.ctx_real);
    Var ctx_f = tape.param(bank.ctx_fake);
    for (int i = 0; i < bank.length(); ++i) {
      real.emplace_back(ag::slice_rows(ctx_r, i, 1));
      fake.emplace_back(ag::slice_rows(ctx_f, i, 1));
    }
  }
  for (int t : bank.real_tokens) real.emplace_back(t);
  for (int t : bank.fake_tokens) fake.emplace_back(t);
  return {std::move(real), std::move(fake)};
}

}  // namespace sapl::ecpl

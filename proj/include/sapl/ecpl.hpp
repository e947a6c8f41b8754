#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sapl/backbone.hpp"

namespace sapl::ecpl {

using ag::Matrix;
using ag::Parameter;
using ag::Tape;
using ag::Var;

// Prompt construction variants. `ecpl` is the full method; the others are
// ablation baselines (fixed words, CoOp-style global context, CoCoOp-style
// class-token conditioning).
enum class PromptStyle { handcrafted, coop, cocoop, ecpl };
PromptStyle parse_prompt_style(const std::string& s);
std::string to_string(PromptStyle s);

struct PromptBank {
  Parameter ctx_real;  // L1 x text width
  Parameter ctx_fake;  // L1 x text width
  std::vector<int> real_tokens;
  std::vector<int> fake_tokens;

  int length() const { return int(ctx_real.value.rows()); }
};

PromptBank make_prompt_bank(const backbone::DualEncoder& enc, int length, std::uint64_t seed);

struct EdgePromptToken {
  Matrix token;  // 1 x text width
  std::string source_image_id;
};

struct EdgeAttention {
  Var pre_projection;  // 1 x attention dim, heads concatenated
  Var token;           // 1 x text width
};

// Single-query multi-head attention from the class token over the summed
// patch pyramid, with values scaled per patch by the soft edge weight:
//   Q = Wq f_cls,  K = P(sum_i f_i),  V = P(sum_i f_i) * e,  T = Wo MHA(Q,K,V).
class EdgePromptGenerator {
 public:
  EdgePromptGenerator() = default;
  EdgePromptGenerator(int joint_dim, int text_width, int heads, std::uint64_t seed);

  // cls: 1 x J, layer_features: each (G*G) x J, edge: (G*G) x 1.
  EdgeAttention forward(Tape& tape, const Var& cls, const std::vector<Var>& layer_features, const Matrix& edge);
  // CoCoOp-style token from the class feature alone: Wo (Wq f_cls + bq) + bo.
  Var class_conditioned(Tape& tape, const Var& cls);

  EdgePromptToken generate(const backbone::PatchFeaturePyramid& pyramid, const Matrix& edge, const std::string& id);

  int heads() const { return heads_; }
  std::vector<Parameter*> parameters();

  Parameter q_w, q_b, p_w, p_b, o_w, o_b;

 private:
  int heads_ = 8;
};

// real = [edge][ctx_real...][real words], fake likewise; the edge token is
// shared. `edge_token` may be invalid for styles without one.
std::pair<std::vector<backbone::PromptToken>, std::vector<backbone::PromptToken>> build_prompts(
    Tape& tape, PromptBank& bank, const Var& edge_token, PromptStyle style);

}  // namespace sapl::ecpl

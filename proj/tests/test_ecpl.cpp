#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "sapl/ecpl.hpp"

using namespace sapl;
using namespace sapl::ecpl;
using sapl::testing::random_matrix;

namespace {

constexpr int kJoint = 6, kWidth = 8, kHeads = 2, kPatches = 5;

// Direct per-head, per-patch evaluation of the edge-aware attention token.
Matrix loop_oracle(const EdgePromptGenerator& g, const Matrix& cls, const std::vector<Matrix>& feats,
                   const Matrix& edge) {
  Matrix summed = Matrix::Zero(kPatches, kJoint);
  for (const auto& f : feats) summed += f;
  Matrix q = cls * g.q_w.value + g.q_b.value;
  Matrix k(kPatches, kWidth);
  for (int i = 0; i < kPatches; ++i) k.row(i) = summed.row(i) * g.p_w.value + g.p_b.value;
  const int dh = kWidth / kHeads;
  Matrix concat(1, kWidth);
  for (int h = 0; h < kHeads; ++h) {
    std::vector<double> logits(kPatches);
    double mx = -1e300;
    for (int i = 0; i < kPatches; ++i) {
      double dot = 0;
      for (int d = 0; d < dh; ++d) dot += q(0, h * dh + d) * k(i, h * dh + d);
      logits[i] = dot / std::sqrt(double(dh));
      mx = std::max(mx, logits[i]);
    }
    double z = 0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (int d = 0; d < dh; ++d) {
      double acc = 0;
      for (int i = 0; i < kPatches; ++i) acc += logits[i] / z * k(i, h * dh + d) * edge(i, 0);
      concat(0, h * dh + d) = acc;
    }
  }
  return concat * g.o_w.value + g.o_b.value;
}

struct Inputs {
  Matrix cls = random_matrix(1, kJoint, 1);
  std::vector<Matrix> feats{random_matrix(kPatches, kJoint, 2), random_matrix(kPatches, kJoint, 3)};
  Matrix edge = (random_matrix(kPatches, 1, 4).array() * 0.5 + 0.5).matrix();
};

Var run(Tape& t, EdgePromptGenerator& g, const Inputs& in) {
  std::vector<Var> f;
  for (const auto& m : in.feats) f.push_back(t.constant(m));
  return g.forward(t, t.constant(in.cls), f, in.edge).token;
}

}  // namespace

TEST(EdgePrompt, MatchesLoopOracle) {
  EdgePromptGenerator g(kJoint, kWidth, kHeads, 7);
  g.q_b.value = random_matrix(1, kWidth, 8, 0.1);
  g.p_b.value = random_matrix(1, kWidth, 9, 0.1);
  g.o_b.value = random_matrix(1, kWidth, 10, 0.1);
  Inputs in;
  Tape t;
  const Matrix token = run(t, g, in).value();
  const Matrix expected = loop_oracle(g, in.cls, in.feats, in.edge);
  ASSERT_EQ(token.cols(), kWidth);
  EXPECT_LT((token - expected).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(EdgePrompt, ZeroEdgesGiveOutputBias) {
  EdgePromptGenerator g(kJoint, kWidth, kHeads, 7);
  g.o_b.value = random_matrix(1, kWidth, 10);
  Inputs in;
  in.edge.setZero();
  Tape t;
  EXPECT_LT((run(t, g, in).value() - g.o_b.value).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EdgePrompt, GradientCheck) {
  EdgePromptGenerator g(kJoint, kWidth, kHeads, 7);
  Inputs in;
  const Matrix w = random_matrix(1, kWidth, 11);
  EXPECT_LT(sapl::testing::max_gradient_error(
                g.parameters(), [&](Tape& t) { return ag::sum_all(ag::hadamard(run(t, g, in), t.constant(w))); }),
            1e-6);
}

TEST(EdgePrompt, RejectsBadShapes) {
  EXPECT_THROW(EdgePromptGenerator(kJoint, kWidth, 3, 0), std::invalid_argument);
  EdgePromptGenerator g(kJoint, kWidth, kHeads, 7);
  Inputs in;
  in.edge = Matrix::Ones(kPatches + 1, 1);
  Tape t;
  EXPECT_THROW(run(t, g, in), std::invalid_argument);
}

TEST(EdgePrompt, ParameterNamesAndInit) {
  EdgePromptGenerator g(kJoint, kWidth, kHeads, 7);
  for (auto* p : g.parameters()) {
    EXPECT_EQ(p->name.rfind("ecpl.attn.", 0), 0u);
    EXPECT_TRUE(p->trainable);
  }
  EXPECT_TRUE(g.q_b.value.isZero());
  EdgePromptGenerator h(kJoint, kWidth, kHeads, 7);
  EXPECT_EQ(g.p_w.value, h.p_w.value);
}

TEST(Prompts, LayoutPerStyle) {
  backbone::DualEncoder enc(backbone::toy_config());
  PromptBank bank = make_prompt_bank(enc, 3, 5);
  EXPECT_EQ(bank.length(), 3);
  EXPECT_EQ(bank.ctx_real.value.cols(), enc.text_width());
  Tape t;
  Var token = t.constant(Matrix::Zero(1, enc.text_width()));
  const size_t words = bank.real_tokens.size();
  auto count = [&](PromptStyle s) { return build_prompts(t, bank, token, s).first.size(); };
  EXPECT_EQ(count(PromptStyle::ecpl), 1 + 3 + words);
  EXPECT_EQ(count(PromptStyle::cocoop), 1 + 3 + words);
  EXPECT_EQ(count(PromptStyle::coop), 3 + words);
  EXPECT_EQ(count(PromptStyle::handcrafted), words);
  const auto [real, fake] = build_prompts(t, bank, token, PromptStyle::ecpl);
  EXPECT_EQ(std::get<Var>(real[0]).id(), std::get<Var>(fake[0]).id());
  EXPECT_EQ(std::get<int>(real.back()), enc.token_id("image"));
  EXPECT_EQ(std::get<int>(fake[fake.size() - 2]), enc.token_id("fake"));
  EXPECT_THROW(build_prompts(t, bank, Var{}, PromptStyle::ecpl), std::invalid_argument);
  EXPECT_THROW(make_prompt_bank(enc, 0, 1), std::invalid_argument);
}

TEST(Prompts, StyleNames) {
  for (auto s : {PromptStyle::handcrafted, PromptStyle::coop, PromptStyle::cocoop, PromptStyle::ecpl})
    EXPECT_EQ(parse_prompt_style(to_string(s)), s);
  EXPECT_THROW(parse_prompt_style("bogus"), std::invalid_argument);
}

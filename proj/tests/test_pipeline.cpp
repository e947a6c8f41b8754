#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "gradcheck.hpp"
#include "sapl/pipeline.hpp"

using namespace sapl;
using namespace sapl::pipeline;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 4;
  c.learning_rate = 1e-2;
  c.prompt_length = 2;
  c.queue_length = 16;
  c.top_k = 2;
  c.layers = {2, 4};
  c.contrast_dim = 8;
  c.warmup = 2;
  return c;
}

const std::vector<corpus::Sample>& tiny_corpus() {
  static const std::vector<corpus::Sample> c = [] {
    corpus::SyntheticCorpusOptions o;
    o.splices = 4;
    o.authentic = 4;
    o.size = 64;
    return corpus::synthetic_corpus(o);
  }();
  return c;
}

std::vector<PreparedSample> prepared(const backbone::DualEncoder& enc) {
  std::vector<PreparedSample> out;
  for (const auto& s : tiny_corpus()) out.push_back(prepare(s, enc));
  return out;
}

std::vector<char> bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST(Schedule, EndpointsAndMidpoint) {
  EXPECT_EQ(schedule_weight(0, 100, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(schedule_weight(100, 100, 0.1), 0.1);
  EXPECT_DOUBLE_EQ(schedule_weight(50, 100, 0.1), 0.05);
  EXPECT_THROW(schedule_weight(101, 100, 0.1), std::invalid_argument);
  EXPECT_THROW(schedule_weight(-1, 100, 0.1), std::invalid_argument);
  EXPECT_DOUBLE_EQ(total_loss(0.7, 2.0, 50, 100, 0.1), 0.8);
}

TEST(Classification, ClosedFormAndTapeAgree) {
  Matrix cls(1, 2), tr(1, 2), tf(1, 2);
  cls << 1, 0;
  tr << 1, 0;
  tf << 0, 3;
  // logits (s, 0) with s = 2
  EXPECT_NEAR(classification_loss(cls, tr, tf, 0, 2.0), std::log(1 + std::exp(-2.0)), 1e-12);
  EXPECT_NEAR(classification_loss(cls, tr, tf, 1, 2.0), std::log(1 + std::exp(2.0)), 1e-12);
  const Matrix c = sapl::testing::random_matrix(1, 5, 1), r = sapl::testing::random_matrix(1, 5, 2),
               f = sapl::testing::random_matrix(1, 5, 3);
  Tape t;
  for (int label : {0, 1}) {
    EXPECT_NEAR(classification_loss(t, t.constant(c), t.constant(r), t.constant(f), label, 10.0).scalar(),
                classification_loss(c, r, f, label, 10.0), 1e-10);
  }
  EXPECT_THROW(classification_loss(t, t.constant(c), t.constant(r), t.constant(f), 3, 1.0), std::invalid_argument);
}

TEST(Config, DefaultLayersAreDepthQuartiles) {
  EXPECT_EQ(default_layers(24), (std::set<int>{6, 12, 18, 24}));
  EXPECT_EQ(default_layers(4), (std::set<int>{1, 2, 3, 4}));
}

TEST(Config, Validation) {
  backbone::DualEncoder enc(backbone::toy_config());
  TrainConfig c = tiny_config();
  EXPECT_NO_THROW(validate(c, enc));
  c.layers = {5};
  EXPECT_THROW(validate(c, enc), backbone::LayerSelectionError);
  c = tiny_config();
  c.prompt_length = enc.max_prompt_length();
  EXPECT_THROW(validate(c, enc), std::invalid_argument);
  c.ecpl = false;
  EXPECT_NO_THROW(validate(c, enc));
  c = tiny_config();
  c.attention_heads = 3;
  EXPECT_THROW(validate(c, enc), std::invalid_argument);
  c = tiny_config();
  c.tau = 0;
  EXPECT_THROW(validate(c, enc), std::invalid_argument);
}

TEST(Aggregate, MeanAndResample) {
  Matrix a = Matrix::Constant(2, 2, 0.2), b = Matrix::Constant(2, 2, 0.6);
  EXPECT_TRUE(aggregate_layers({a, b}).isApprox(Matrix::Constant(2, 2, 0.4)));
  EXPECT_THROW(aggregate_layers({a, Matrix::Zero(3, 3)}), std::invalid_argument);
  EXPECT_THROW(aggregate_layers({}), std::invalid_argument);
  const RealGrid h = heatmap_to_source(Matrix::Constant(8, 8, 0.3), 512, Rect{0, 0, 384, 512}, 300, 400);
  EXPECT_EQ(h.height(), 300);
  EXPECT_EQ(h.width(), 400);
  for (double v : h.data()) EXPECT_NEAR(v, 0.3, 1e-12);
}

TEST(HeatmapIo, BitExactRoundTrip) {
  RealGrid m(7, 5);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = double(float(std::sin(double(i)) * 0.5 + 0.5));
  const fs::path a = fs::temp_directory_path() / "sapl_map_a.bin", b = fs::temp_directory_path() / "sapl_map_b.bin";
  write_heatmap(a, m);
  const RealGrid back = read_heatmap(a);
  EXPECT_EQ(back, m);
  write_heatmap(b, back);
  EXPECT_EQ(bytes(a), bytes(b));
  EXPECT_EQ(bytes(a).size(), 8 + 8 + 35 * 4u);
  std::ofstream(a, std::ios::binary) << "garbage!garbage!";
  EXPECT_THROW(read_heatmap(a), std::runtime_error);
}

TEST(Prepare, EdgeGridShape) {
  backbone::DualEncoder enc(backbone::toy_config());
  const PreparedSample p = prepare(tiny_corpus()[0], enc);
  EXPECT_EQ(p.edge.rows(), enc.grid() * enc.grid());
  EXPECT_GE(p.edge.minCoeff(), 0.0);
  EXPECT_LE(p.edge.maxCoeff(), 1.0);
  EXPECT_EQ(p.source_height, 64);
  EXPECT_TRUE(p.mask.has_value());
}

TEST(Training, DeterministicForEqualSeeds) {
  backbone::DualEncoder enc(backbone::toy_config());
  const auto data = prepared(enc);
  auto run = [&](std::uint64_t seed) {
    TrainConfig c = tiny_config();
    c.seed = seed;
    Model m(enc, c);
    return train(m, data).step_losses;
  };
  const auto a = run(3), b = run(3), c = run(4);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
  EXPECT_NE(a, c);
}

TEST(Training, FrozenWeightsUntouchedAndAuditExact) {
  backbone::DualEncoder enc(backbone::toy_config());
  std::vector<Matrix> before;
  for (auto* p : enc.frozen_parameters()) before.push_back(p->value);
  Model m(enc, tiny_config());
  const TrainResult r = train(m, prepared(enc));
  EXPECT_GT(r.epochs.back().hecl_steps, 0);
  const auto frozen = enc.frozen_parameters();
  for (std::size_t i = 0; i < frozen.size(); ++i) {
    ASSERT_EQ(frozen[i]->value.size(), before[i].size());
    EXPECT_EQ(std::memcmp(frozen[i]->value.data(), before[i].data(), sizeof(double) * before[i].size()), 0)
        << frozen[i]->name;
  }
  for (const auto& name : m.trainable_names()) {
    const bool ok = name.rfind("lora.", 0) == 0 || name.rfind("ecpl.", 0) == 0 || name.rfind("hecl.head", 0) == 0;
    EXPECT_TRUE(ok) << name;
  }
  EXPECT_EQ(m.trainable_names().size(), enc.lora_parameters().size() + 2 + 6 + 2);
}

TEST(Training, AuditFollowsAblations) {
  backbone::DualEncoder enc(backbone::toy_config());
  TrainConfig c = tiny_config();
  c.ecpl = false;
  c.hecl = false;
  EXPECT_EQ(Model(enc, c).trainable_names().size(), enc.lora_parameters().size());
  c.ecpl = true;
  c.prompt_style = ecpl::PromptStyle::coop;
  EXPECT_EQ(Model(enc, c).trainable_names().size(), enc.lora_parameters().size() + 2);
  c.prompt_style = ecpl::PromptStyle::cocoop;
  EXPECT_EQ(Model(enc, c).trainable_names().size(), enc.lora_parameters().size() + 2 + 4);
}

TEST(Training, RejectsSingleClassData) {
  backbone::DualEncoder enc(backbone::toy_config());
  auto data = prepared(enc);
  data.resize(4);
  Model m(enc, tiny_config());
  EXPECT_THROW(train(m, data), TrainingError);
  EXPECT_THROW(train(m, std::vector<PreparedSample>{}), TrainingError);
}

TEST(Training, ManifestAndCheckpointRoundTrip) {
  backbone::DualEncoder enc(backbone::toy_config());
  const fs::path out = fs::temp_directory_path() / "sapl_train_out";
  fs::remove_all(out);
  TrainConfig c = tiny_config();
  c.epochs = 1;
  Model m(enc, c);
  const auto data = prepared(enc);
  TrainOptions o;
  o.out_dir = out;
  const TrainResult r = train(m, data, o);
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  ASSERT_TRUE(fs::exists(r.epochs[0].checkpoint));
  const RealGrid trained = localize(m, data[0]).heatmap;

  Model fresh(enc, c);
  fresh.load(r.epochs[0].checkpoint);
  const LocalizationResult again = localize(fresh, data[0]);
  EXPECT_EQ(again.heatmap, trained);
  EXPECT_EQ(again.heatmap.height(), 64);
  EXPECT_EQ(again.per_layer_maps.size(), 2u);

  TrainConfig other = c;
  other.ecpl = false;
  Model mismatched(enc, other);
  EXPECT_THROW(mismatched.load(r.epochs[0].checkpoint), CheckpointError);
  EXPECT_THROW(fresh.load(out / "missing.sapl"), CheckpointError);
}

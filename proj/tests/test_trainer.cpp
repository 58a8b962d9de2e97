#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "st5/checkpoint.hpp"
#include "st5/synthetic.hpp"
#include "st5/trainer.hpp"
#include "test_util.hpp"

using namespace st5;
using st5::testing::TempDir;

TEST(Schedule, ExamplePoints) {
  EXPECT_NEAR(lr_at(50, 1000, 0.001, 0.1), 0.001, 1e-15);
  EXPECT_NEAR(lr_at(550, 1000, 0.001, 0.1), 0.0005, 1e-15);
  EXPECT_NEAR(lr_at(1000, 1000, 0.001, 0.1), 0.0, 1e-15);
  EXPECT_EQ(lr_at(0, 1000, 0.001, 0.1), 0.001);
  EXPECT_EQ(lr_at(99, 1000, 0.001, 0.1), 0.001);
  EXPECT_THROW(lr_at(-1, 1000, 0.001, 0.1), ParameterError);
  EXPECT_THROW(lr_at(1001, 1000, 0.001, 0.1), ParameterError);
}

TEST(Schedule, ContinuousAndNonIncreasing) {
  for (std::int64_t total : {10, 37, 1000}) {
    double prev = lr_at(0, total, 0.001, 0.1);
    for (std::int64_t s = 1; s <= total; ++s) {
      const double lr = lr_at(s, total, 0.001, 0.1);
      EXPECT_LE(lr, prev);
      prev = lr;
    }
  }
  // boundary: the decay line starts at peak
  EXPECT_EQ(lr_at(100, 1000, 0.001, 0.1), 0.001);
}

TEST(Batching, EpochsArePermutations) {
  const std::size_t n = 10, b = 3;
  std::multiset<std::size_t> seen;
  for (std::int64_t step = 0; step < 3; ++step) {
    const auto rows = batch_indices(n, b, 5, step);
    EXPECT_EQ(rows.size(), b);
    seen.insert(rows.begin(), rows.end());
  }
  EXPECT_EQ(seen.size(), 9u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 9u);  // remainder dropped, no repeats
  EXPECT_EQ(batch_indices(n, b, 5, 7), batch_indices(n, b, 5, 7));
  EXPECT_NE(batch_indices(n, b, 5, 0), batch_indices(n, b, 6, 0));
}

TEST(Batching, SmallDatasetWraps) {
  const auto rows = batch_indices(3, 8, 1, 0);
  ASSERT_EQ(rows.size(), 8u);
  for (std::size_t r : rows) EXPECT_LT(r, 3u);
  std::set<std::size_t> first(rows.begin(), rows.begin() + 3);
  EXPECT_EQ(first.size(), 3u);
  EXPECT_THROW(batch_indices(0, 2, 1, 0), ContractError);
}

TEST(LoadPairs, Formats) {
  TempDir dir("pairs");
  std::ofstream(dir / "p.jsonl") << "{\"text_a\":\"a\",\"text_b\":\"b\"}\n\n{\"text_a\":\"x\",\"text_b\":\"y\",\"text_neg\":\"z\"}\n";
  const auto j = load_pairs(dir / "p.jsonl");
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[0], (PairRecord{"a", "b", std::nullopt}));
  EXPECT_EQ(j[1], (PairRecord{"x", "y", std::string("z")}));

  std::ofstream(dir / "p.tsv") << "a\tb\tc\r\nd\te\n";
  const auto t = load_pairs(dir / "p.tsv");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0], (PairRecord{"a", "b", std::string("c")}));
  EXPECT_EQ(t[1], (PairRecord{"d", "e", std::nullopt}));

  std::ofstream(dir / "empty.tsv") << "";
  EXPECT_TRUE(load_pairs(dir / "empty.tsv").empty());

  write_pairs_jsonl(dir / "rt.jsonl", j);
  EXPECT_EQ(load_pairs(dir / "rt.jsonl"), j);
}

TEST(LoadPairs, ErrorsNameTheLine) {
  TempDir dir("pairs-bad");
  std::ofstream(dir / "bad.jsonl") << "{\"text_a\":\"a\",\"text_b\":\"b\"}\n{\"text_a\":\"only\"}\n";
  try {
    load_pairs(dir / "bad.jsonl");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("text_b"), std::string::npos) << e.what();
  }
  std::ofstream(dir / "bad.tsv") << "a\tb\nlonely\n";
  try {
    load_pairs(dir / "bad.tsv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::ofstream(dir / "garbage.jsonl") << "{not json\n";
  EXPECT_THROW(load_pairs(dir / "garbage.jsonl"), ParseError);
  EXPECT_THROW(load_pairs(dir / "missing.tsv"), IoError);
}

namespace {

// Independent restatement of the scalar (unfactored) update.
double adafactor_scalar(double x, double g, int steps, double lr) {
  double v = 0.0;
  for (int t = 1; t <= steps; ++t) {
    const double beta = 1.0 - std::pow(static_cast<double>(t), -0.8);
    v = beta * v + (1.0 - beta) * (g * g + 1e-30);
    double u = g / std::sqrt(v);
    u /= std::max(1.0, std::abs(u) / 1.0);
    x -= lr * u;
  }
  return x;
}

ParameterStore one_param(const std::string& name, Tensor t) {
  ParameterStore p;
  p.add(name, std::move(t));
  return p;
}

}  // namespace

TEST(Adafactor, ScalarMatchesHandSteppedOracle) {
  ParameterStore p = one_param("w", Tensor::vector({0.5}));
  OptimizerState st = make_optimizer_state({}, p);
  const std::vector<Tensor> g{Tensor::vector({0.3})};
  for (int i = 0; i < 5; ++i) optimizer_step(p, st, g, 0.01);
  const double expected = adafactor_scalar(0.5, 0.3, 5, 0.01);
  EXPECT_NEAR(p[0][0], expected, 1e-9 * std::abs(expected));
  EXPECT_EQ(st.step, 5);
}

TEST(Adafactor, FactoredFirstStepOracle) {
  Matrix w(2, 3);
  w << 1, 2, 3, 4, 5, 6;
  Matrix g(2, 3);
  g << 0.1, -0.2, 0.3, 0.4, 0.0, -0.6;
  ParameterStore p = one_param("m", Tensor::from_matrix(w));
  OptimizerState st = make_optimizer_state({}, p);
  EXPECT_TRUE(st.slots.contains("m.row"));
  EXPECT_TRUE(st.slots.contains("m.col"));
  optimizer_step(p, st, std::vector<Tensor>{Tensor::from_matrix(g)}, 0.1);
  // beta_1 = 0: accumulators equal the row/col means of g^2
  const Matrix g2 = g.array().square() + 1e-30;
  const Eigen::VectorXd r = g2.rowwise().mean();
  const Eigen::RowVectorXd c = g2.colwise().mean();
  Matrix u(2, 3);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j) u(i, j) = g(i, j) / std::sqrt(r(i) * c(j) / r.mean());
  const double rms = std::sqrt(u.squaredNorm() / 6.0);
  u /= std::max(1.0, rms);
  EXPECT_LT((p[0].mat() - (w - 0.1 * u)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Adafactor, ZeroGradientLeavesParameters) {
  ParameterStore p = one_param("w", Tensor::vector({1.0, -2.0}));
  const ParameterStore before = p;
  OptimizerState st = make_optimizer_state({}, p);
  optimizer_step(p, st, std::vector<Tensor>{Tensor::vector({0.0, 0.0})}, 0.01);
  EXPECT_TRUE(p == before);
}

TEST(Adafactor, NonFiniteGradientNamesTensor) {
  ParameterStore p;
  p.add("ok", Tensor::vector({1.0}));
  p.add("bad", Tensor::vector({1.0}));
  const ParameterStore before = p;
  OptimizerState st = make_optimizer_state({}, p);
  const std::vector<Tensor> g{Tensor::vector({1.0}), Tensor::vector({std::nan("")})};
  try {
    optimizer_step(p, st, g, 0.01);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("'bad'"), std::string::npos);
  }
  EXPECT_TRUE(p == before);
}

TEST(Adam, FallbackRuns) {
  ParameterStore p = one_param("w", Tensor::vector({0.0}));
  OptimizerConfig c;
  c.kind = OptimizerKind::Adam;
  OptimizerState st = make_optimizer_state(c, p);
  optimizer_step(p, st, std::vector<Tensor>{Tensor::vector({2.0})}, 0.1);
  EXPECT_NEAR(p[0][0], -0.1, 1e-6);  // first bias-corrected step is lr * sign
  EXPECT_EQ(parse_optimizer_kind("adam"), OptimizerKind::Adam);
  EXPECT_THROW(parse_optimizer_kind("sgd"), ConfigError);
}

TEST(Clipping, KeepsDirection) {
  std::vector<Tensor> g{Tensor::vector({3.0}), Tensor::vector({4.0, 0.0})};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[1][0], 0.8, 1e-15);
  std::vector<Tensor> small{Tensor::vector({0.1})};
  clip_global_norm(small, 1.0);
  EXPECT_EQ(small[0][0], 0.1);
}

namespace {

StageConfig small_stage(std::int64_t steps) {
  StageConfig c;
  c.batch_size = 8;
  c.total_steps = steps;
  c.temperature = 0.05;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Stage, InitialLossNearLogBatchAndDecreases) {
  const auto records = synth::paraphrase_pairs(64, 9);
  TrainState st = make_train_state(ModelConfig::preset(SizePreset::Tiny), 4);
  const auto m = run_stage(st, small_stage(200), records);
  ASSERT_FALSE(m.empty());
  EXPECT_NEAR(m.front().loss, std::log(8.0), 0.2 * std::log(8.0));
  double tail = 0.0;
  for (std::size_t i = m.size() - 20; i < m.size(); ++i) tail += m[i].loss;
  EXPECT_LT(tail / 20.0, m.front().loss);
  EXPECT_EQ(st.step, 200);
}

TEST(Stage, DeterministicAndOrderInvariant) {
  auto records = synth::nli_triples(20, 2);
  StageConfig c = small_stage(12);
  c.use_hard_negatives = true;
  TrainState a = make_train_state(ModelConfig::preset(SizePreset::Tiny), 1);
  TrainState b = make_train_state(ModelConfig::preset(SizePreset::Tiny), 1);
  const auto ma = run_stage(a, c, records);
  std::reverse(records.begin(), records.end());
  std::rotate(records.begin(), records.begin() + 7, records.end());
  const auto mb = run_stage(b, c, records);
  EXPECT_EQ(ma, mb);
  EXPECT_TRUE(a.model.params == b.model.params);
  EXPECT_TRUE(a.optimizer == b.optimizer);
}

TEST(Stage, ResumeMatchesUninterruptedRun) {
  TempDir dir("resume");
  const auto records = synth::paraphrase_pairs(30, 5);
  const StageConfig c = small_stage(10);
  TrainState full = make_train_state(ModelConfig::preset(SizePreset::Tiny), 2);
  const auto m_full = run_stage(full, c, records);

  TrainState part = make_train_state(ModelConfig::preset(SizePreset::Tiny), 2);
  RunOptions stop;
  stop.max_steps = 4;
  auto m_part = run_stage(part, c, records, stop);
  EXPECT_EQ(part.step, 4);
  save_checkpoint(dir / "mid.st5f", part);
  TrainState resumed = load_checkpoint(dir / "mid.st5f");
  const auto rest = run_stage(resumed, c, records);
  m_part.insert(m_part.end(), rest.begin(), rest.end());
  EXPECT_EQ(m_part, m_full);
  EXPECT_TRUE(resumed.model.params == full.model.params);
  EXPECT_TRUE(resumed.optimizer == full.optimizer);
}

TEST(Stage, ValidationErrors) {
  TrainState st = make_train_state(ModelConfig::preset(SizePreset::Tiny), 1);
  const auto pairs = synth::paraphrase_pairs(4, 1);
  StageConfig c = small_stage(2);
  c.use_hard_negatives = true;
  EXPECT_THROW(run_stage(st, c, pairs), ConfigError);
  c = small_stage(2);
  c.batch_size = 1;
  EXPECT_THROW(run_stage(st, c, pairs), ConfigError);
  c = small_stage(2);
  EXPECT_THROW(run_stage(st, c, std::vector<PairRecord>{}), ContractError);
  c.warm_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TwoStage, HandoffAndScheduleReset) {
  TempDir dir("two");
  const auto qa = synth::qa_pairs(24, 1);
  const auto nli = synth::nli_triples(24, 2);
  StageConfig s1 = small_stage(6), s2 = small_stage(5);
  s2.use_hard_negatives = true;
  const auto r = run_two_stage(ModelConfig::preset(SizePreset::Tiny), 11, s1, qa, s2, nli, dir.path());
  ASSERT_EQ(r.stage2_metrics.size(), 5u);
  EXPECT_EQ(r.stage2_metrics.front().step, 0);
  EXPECT_EQ(r.stage2_metrics.front().lr, lr_at(0, s2));
  EXPECT_EQ(r.final_state.step, 5);
  EXPECT_EQ(r.final_state.optimizer.step, 5);

  const TrainState c1 = load_checkpoint(dir / "stage1.st5f");
  EXPECT_TRUE(c1.model.params == r.stage1_model.params);
  EXPECT_EQ(c1.step, 6);
  EXPECT_TRUE(load_checkpoint(dir / "stage2.st5f").model.params == r.final_state.model.params);

  // stage 2 alone from the stage-1 parameters reproduces the final state
  TrainState manual = make_train_state(ModelConfig::preset(SizePreset::Tiny), 11);
  manual.model = r.stage1_model;
  run_stage(manual, s2, nli);
  EXPECT_TRUE(manual.model.params == r.final_state.model.params);
}

TEST(Metrics, CsvFormat) {
  TempDir dir("metrics");
  const std::vector<MetricRow> rows{{0, 0.001, 2.0794415416798357}, {1, 0.0005, 1.5}};
  write_metrics_csv(dir / "m.csv", rows);
  std::ifstream in(dir / "m.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,lr,loss");
  std::getline(in, line);
  EXPECT_EQ(line, "0,0.001,2.0794415416798357");
}

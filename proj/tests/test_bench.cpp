#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "st5/backbone.hpp"
#include "st5/bench.hpp"
#include "test_util.hpp"

using namespace st5;

namespace {

BenchSpec small_spec() {
  BenchSpec s;
  s.presets = {SizePreset::Tiny, SizePreset::Small};
  s.seq_lens = {8, 32};
  s.batch_sizes = {1, 4};
  s.warmup_iters = 1;
  s.measure_iters = 3;
  return s;
}

}  // namespace

TEST(BenchSpec, Validation) {
  EXPECT_NO_THROW(BenchSpec{}.validate());
  BenchSpec s = small_spec();
  s.measure_iters = 2;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.seq_lens = {ModelConfig::preset(SizePreset::Tiny).max_seq_len + 1};
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.batch_sizes = {0};
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.presets.clear();
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(SyntheticBatch, FullyUnmaskedAndInVocab) {
  const ModelConfig c = ModelConfig::preset(SizePreset::Tiny);
  const TokenBatch b = synthetic_token_batch(c, 17, 3, 5);
  EXPECT_EQ(b.batch(), 3);
  EXPECT_EQ(b.length(), 17);
  EXPECT_EQ(b.mask.minCoeff(), 1);
  EXPECT_GE(b.ids.minCoeff(), 3);
  EXPECT_LT(b.ids.maxCoeff(), c.vocab_size);
  EXPECT_EQ(synthetic_token_batch(c, 17, 3, 5).ids, b.ids);
}

TEST(Sweep, CardinalityAndCsvRoundTrip) {
  const SweepResult r = run_sweep(small_spec());
  EXPECT_TRUE(r.failures.empty());
  ASSERT_EQ(r.rows.size(), 8u);
  for (const auto& row : r.rows) {
    EXPECT_GT(row.examples_per_second, 0.0);
    EXPECT_TRUE(std::isfinite(row.examples_per_second));
    EXPECT_TRUE(std::isfinite(row.stddev));
    EXPECT_GE(row.threads, 1);
  }
  EXPECT_EQ(r.rows.front().preset, "tiny");
  EXPECT_EQ(r.rows.back().preset, "small");

  st5::testing::TempDir dir("bench");
  write_bench_csv(dir / "b.csv", r.rows);
  EXPECT_EQ(read_bench_csv(dir / "b.csv"), r.rows);
  std::ifstream in(dir / "b.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "preset,seq_len,batch_size,examples_per_sec,stddev,threads");

  std::ofstream(dir / "bad.csv") << "preset,seq_len,batch_size,examples_per_sec,stddev,threads\ntiny,1,2\n";
  EXPECT_THROW(read_bench_csv(dir / "bad.csv"), ParseError);

  const std::string table = render_bench_table(r);
  EXPECT_NE(table.find("forward pass only"), std::string::npos);
  EXPECT_NE(table.find("[tiny]"), std::string::npos);
  EXPECT_NE(table.find("[small]"), std::string::npos);
}

TEST(Measure, DoesNotMutateParameters) {
  const EncoderDecoderModel model = init_model(ModelConfig::preset(SizePreset::Tiny), 4);
  const auto before = parameter_checksum(model.params);
  for (auto s : {ExtractionStrategy::EncoderFirst, ExtractionStrategy::EncoderMean,
                 ExtractionStrategy::EncoderDecoderFirst}) {
    measure_throughput(model, 16, 2, 1, 3, s);
  }
  EXPECT_EQ(parameter_checksum(model.params), before);
}

TEST(Measure, CapacityAndParameterErrors) {
  const EncoderDecoderModel model = init_model(ModelConfig::preset(SizePreset::Tiny), 4);
  EXPECT_THROW(measure_throughput(model, 64, 8, 0, 3, ExtractionStrategy::EncoderMean, 0, 1024), CapacityError);
  EXPECT_THROW(measure_throughput(model, 16, 1, 0, 2), ParameterError);
  EXPECT_THROW(measure_throughput(model, 0, 1, 0, 3), LengthError);
  EXPECT_THROW(measure_throughput(model, 16, 0, 0, 3), ParameterError);

  // a failing cell is recorded and the sweep carries on
  BenchSpec s = small_spec();
  s.presets = {SizePreset::Tiny};
  s.seq_lens = {8, 64};
  s.batch_sizes = {1};
  s.memory_limit_bytes = estimated_forward_bytes(ModelConfig::preset(SizePreset::Tiny), 8, 1);
  const SweepResult r = run_sweep(s);
  EXPECT_EQ(r.rows.size(), 1u);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].seq_len, 64);
  EXPECT_NE(render_bench_table(r).find("failed: tiny seq_len=64"), std::string::npos);
}

TEST(Measure, EstimateGrowsWithShape) {
  const ModelConfig c = ModelConfig::preset(SizePreset::Small);
  EXPECT_LT(estimated_forward_bytes(c, 32, 1), estimated_forward_bytes(c, 64, 1));
  EXPECT_LT(estimated_forward_bytes(c, 32, 1), estimated_forward_bytes(c, 32, 8));
  EXPECT_LT(estimated_forward_bytes(ModelConfig::preset(SizePreset::Tiny), 32, 1), estimated_forward_bytes(c, 32, 1));
}

// Timing checks. Long gaps in cost keep these robust on a busy machine.
TEST(Measure, LongerSequencesAreNotFaster) {
  const EncoderDecoderModel model = init_model(ModelConfig::preset(SizePreset::Tiny), 1);
  const BenchRow a = measure_throughput(model, 16, 2, 2, 5);
  const BenchRow b = measure_throughput(model, 128, 2, 2, 5);
  EXPECT_LE(b.examples_per_second, a.examples_per_second + a.stddev + b.stddev);
}

TEST(Measure, TinyOutrunsBaseToy) {
  const EncoderDecoderModel tiny = init_model(ModelConfig::preset(SizePreset::Tiny), 1);
  const EncoderDecoderModel base = init_model(ModelConfig::preset(SizePreset::BaseToy), 1);
  EXPECT_GT(measure_throughput(tiny, 32, 4, 2, 5).examples_per_second,
            measure_throughput(base, 32, 4, 2, 5).examples_per_second);
}

TEST(Measure, DoublingItersIsStable) {
  const EncoderDecoderModel model = init_model(ModelConfig::preset(SizePreset::Tiny), 1);
  const BenchRow a = measure_throughput(model, 32, 4, 3, 10);
  const BenchRow b = measure_throughput(model, 32, 4, 3, 20);
  EXPECT_LT(std::abs(a.examples_per_second - b.examples_per_second), 3.0 * std::max(a.stddev, b.stddev));
}

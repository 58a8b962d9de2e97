#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "st5/embedder.hpp"
#include "st5/model.hpp"

namespace st5 {

struct BenchSpec {
  std::vector<SizePreset> presets{SizePreset::Tiny, SizePreset::Small};
  std::vector<std::int64_t> seq_lens{32, 64, 128, 256};
  std::vector<std::int64_t> batch_sizes{1, 8};
  std::int64_t warmup_iters = 3;
  std::int64_t measure_iters = 5;
  ExtractionStrategy strategy = ExtractionStrategy::EncoderMean;
  std::uint64_t seed = 0;  // parameter init and token ids
  std::uint64_t memory_limit_bytes = std::uint64_t{4} << 30;

  void validate() const;
};

struct BenchRow {
  std::string preset;
  std::int64_t seq_len = 0;
  std::int64_t batch_size = 0;
  double examples_per_second = 0.0;  // iters * batch / total measured time
  double stddev = 0.0;               // of per-iteration examples/second
  std::int64_t threads = 1;

  friend bool operator==(const BenchRow&, const BenchRow&) = default;
};

struct BenchFailure {
  std::string preset;
  std::int64_t seq_len = 0;
  std::int64_t batch_size = 0;
  std::string message;
};

struct SweepResult {
  std::vector<BenchRow> rows;
  std::vector<BenchFailure> failures;
};

// Rough peak bytes of one inference forward pass.
std::uint64_t estimated_forward_bytes(const ModelConfig& config, std::int64_t seq_len, std::int64_t batch_size);

// Random, fully unmasked token batch of exactly seq_len ids.
TokenBatch synthetic_token_batch(const ModelConfig& config, std::int64_t seq_len, std::int64_t batch_size,
                                 std::uint64_t seed);

// Times extract -> project -> normalize on a prepared batch. Throws
// CapacityError when the pass would exceed memory_limit_bytes.
BenchRow measure_throughput(const EncoderDecoderModel& model, std::int64_t seq_len, std::int64_t batch_size,
                            std::int64_t warmup, std::int64_t iters,
                            ExtractionStrategy strategy = ExtractionStrategy::EncoderMean, std::uint64_t seed = 0,
                            std::uint64_t memory_limit_bytes = std::uint64_t{4} << 30);

// One cell at a time over presets x seq_lens x batch_sizes; a failing cell
// is recorded and the sweep moves on.
SweepResult run_sweep(const BenchSpec& spec);

// Columns preset,seq_len,batch_size,examples_per_sec,stddev,threads.
void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows);
std::vector<BenchRow> read_bench_csv(const std::filesystem::path& path);

// Aligned table, one block per preset.
std::string render_bench_table(const SweepResult& result);

}  // namespace st5

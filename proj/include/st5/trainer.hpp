#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "st5/contrastive.hpp"
#include "st5/embedder.hpp"
#include "st5/optimizer.hpp"
#include "st5/tokenizer.hpp"
#include "st5/train_state.hpp"

namespace st5 {

struct PairRecord {
  std::string text_a;
  std::string text_b;
  std::optional<std::string> text_neg;

  friend auto operator<=>(const PairRecord&, const PairRecord&) = default;
};

enum class PairFormat { Jsonl, Tsv };

// .jsonl / .json -> Jsonl, everything else -> Tsv.
PairFormat detect_pair_format(const std::filesystem::path& path);

// JSONL: {"text_a": ..., "text_b": ..., "text_neg": optional}. TSV: two or
// three tab-separated columns. Blank lines are skipped; an empty file yields
// an empty list and a warning.
std::vector<PairRecord> load_pairs(const std::filesystem::path& path, PairFormat format);
std::vector<PairRecord> load_pairs(const std::filesystem::path& path);
void write_pairs_jsonl(const std::filesystem::path& path, std::span<const PairRecord> records);

struct StageConfig {
  std::string dataset_path;
  std::int64_t batch_size = 16;
  std::int64_t total_steps = 100;
  double peak_lr = 1e-3;
  double warm_fraction = 0.10;
  double temperature = 0.01;
  ExtractionStrategy strategy = ExtractionStrategy::EncoderMean;
  std::uint64_t seed = 0;
  bool use_hard_negatives = false;
  OptimizerKind optimizer = OptimizerKind::Adafactor;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::int64_t log_every = 1;

  void validate() const;
};

// Constant peak_lr while step < warm_fraction * total_steps, then linear
// decay reaching 0 at total_steps.
double lr_at(std::int64_t step, std::int64_t total_steps, double peak_lr, double warm_fraction);
double lr_at(std::int64_t step, const StageConfig& config);

// Dataset rows used at `step`. With n >= batch_size every epoch is a fresh
// seeded permutation cut into floor(n / batch_size) batches (the remainder
// is dropped). With n < batch_size the permutations are concatenated and
// batches wrap across epoch boundaries.
std::vector<std::size_t> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                       std::int64_t step);

PairBatch make_pair_batch(std::span<const PairRecord> records, std::span<const std::size_t> rows,
                          const ByteVocab& vocab, bool with_negatives);

struct MetricRow {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct RunOptions {
  // Return after this many steps in this call (for interruption/resume).
  std::optional<std::int64_t> max_steps;
  std::function<void(const TrainState&, const MetricRow&)> on_step;
};

// Runs the stage from state.step up to config.total_steps. Records are
// put into canonical order first, so the trajectory depends on their
// multiset and the seed only.
std::vector<MetricRow> run_stage(TrainState& state, const StageConfig& config, std::span<const PairRecord> records,
                                 const RunOptions& options = {});
// Loads config.dataset_path.
std::vector<MetricRow> run_stage(TrainState& state, const StageConfig& config, const RunOptions& options = {});

struct TwoStageResult {
  TrainState final_state;
  EncoderDecoderModel stage1_model;
  std::vector<MetricRow> stage1_metrics;
  std::vector<MetricRow> stage2_metrics;
};

// Stage 2 starts from stage 1's parameters with fresh optimizer slots and a
// fresh schedule. When checkpoint_dir is set, writes stage1.st5f and
// stage2.st5f there.
TwoStageResult run_two_stage(const ModelConfig& model_config, std::uint64_t init_seed, const StageConfig& stage1,
                             std::span<const PairRecord> records1, const StageConfig& stage2,
                             std::span<const PairRecord> records2,
                             const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt);

// CSV with header `step,lr,loss`, values at full precision.
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);

}  // namespace st5

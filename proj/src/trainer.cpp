#include "st5/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "st5/checkpoint.hpp"
#include "st5/log.hpp"

namespace st5 {

PairFormat detect_pair_format(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  return (ext == ".jsonl" || ext == ".json") ? PairFormat::Jsonl : PairFormat::Tsv;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

PairRecord parse_json_line(const std::string& source, std::size_t line_no, const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source, line_no, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(source, line_no, "expected a JSON object");
  auto field = [&](const char* key) -> std::string {
    if (!j.contains(key)) throw ParseError(source, line_no, std::string("missing required field '") + key + "'");
    if (!j[key].is_string()) throw ParseError(source, line_no, std::string("field '") + key + "' must be a string");
    return j[key].get<std::string>();
  };
  PairRecord r{field("text_a"), field("text_b"), std::nullopt};
  if (j.contains("text_neg") && !j["text_neg"].is_null()) r.text_neg = field("text_neg");
  return r;
}

PairRecord parse_tsv_line(const std::string& source, std::size_t line_no, const std::string& line) {
  const auto cols = split_tabs(line);
  if (cols.size() < 2) throw ParseError(source, line_no, "missing text_b column");
  if (cols.size() > 3) throw ParseError(source, line_no, "expected 2 or 3 columns, got " + std::to_string(cols.size()));
  PairRecord r{cols[0], cols[1], std::nullopt};
  if (cols.size() == 3) r.text_neg = cols[2];
  return r;
}

}  // namespace

std::vector<PairRecord> load_pairs(const std::filesystem::path& path, PairFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pair file '" + path.string() + "'");
  std::vector<PairRecord> records;
  std::string line;
  std::size_t line_no = 0;
  const std::string source = path.string();
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    PairRecord r = format == PairFormat::Jsonl ? parse_json_line(source, line_no, line)
                                               : parse_tsv_line(source, line_no, line);
    if (r.text_a.empty()) throw ParseError(source, line_no, "text_a is empty");
    if (r.text_b.empty()) throw ParseError(source, line_no, "text_b is empty");
    records.push_back(std::move(r));
  }
  if (records.empty()) warn("pair file '" + source + "' contains no records");
  return records;
}

std::vector<PairRecord> load_pairs(const std::filesystem::path& path) {
  return load_pairs(path, detect_pair_format(path));
}

void write_pairs_jsonl(const std::filesystem::path& path, std::span<const PairRecord> records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& r : records) {
    nlohmann::ordered_json j = {{"text_a", r.text_a}, {"text_b", r.text_b}};
    if (r.text_neg) j["text_neg"] = *r.text_neg;
    out << j.dump() << '\n';
  }
}

void StageConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (batch_size < 2 && !use_hard_negatives) throw ConfigError("batch_size must be >= 2 without hard negatives");
  if (total_steps < 1) throw ConfigError("total_steps must be positive");
  if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
  if (!(warm_fraction > 0.0 && warm_fraction < 1.0)) throw ConfigError("warm_fraction must lie in (0, 1)");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (log_every < 1) throw ConfigError("log_every must be positive");
}

double lr_at(std::int64_t step, std::int64_t total_steps, double peak_lr, double warm_fraction) {
  if (total_steps < 1 || step < 0 || step > total_steps) {
    throw ParameterError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  const double total = static_cast<double>(total_steps);
  const double warm = warm_fraction * total;
  const double s = static_cast<double>(step);
  if (s < warm) return peak_lr;
  return peak_lr * (total - s) / (total - warm);
}

double lr_at(std::int64_t step, const StageConfig& config) {
  return lr_at(step, config.total_steps, config.peak_lr, config.warm_fraction);
}

namespace {

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace

std::vector<std::size_t> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                       std::int64_t step) {
  if (n == 0 || batch_size == 0) throw ContractError("batch_indices needs a non-empty dataset and batch");
  const auto s = static_cast<std::uint64_t>(step);
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  if (n >= batch_size) {
    const std::uint64_t per_epoch = n / batch_size;
    const auto perm = epoch_permutation(n, seed, s / per_epoch);
    const std::size_t offset = static_cast<std::size_t>(s % per_epoch) * batch_size;
    out.assign(perm.begin() + static_cast<std::ptrdiff_t>(offset),
               perm.begin() + static_cast<std::ptrdiff_t>(offset + batch_size));
    return out;
  }
  std::uint64_t pos = s * batch_size;
  std::uint64_t cached_epoch = pos / n;
  auto perm = epoch_permutation(n, seed, cached_epoch);
  for (std::size_t k = 0; k < batch_size; ++k, ++pos) {
    if (pos / n != cached_epoch) {
      cached_epoch = pos / n;
      perm = epoch_permutation(n, seed, cached_epoch);
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

PairBatch make_pair_batch(std::span<const PairRecord> records, std::span<const std::size_t> rows,
                          const ByteVocab& vocab, bool with_negatives) {
  std::vector<std::string> a, b, neg;
  for (std::size_t r : rows) {
    const PairRecord& rec = records[r];
    a.push_back(rec.text_a);
    b.push_back(rec.text_b);
    if (with_negatives) {
      if (!rec.text_neg) throw ContractError("record " + std::to_string(r) + " has no negative");
      neg.push_back(*rec.text_neg);
    }
  }
  PairBatch batch{make_batch(a, vocab), make_batch(b, vocab), std::nullopt};
  if (with_negatives) batch.negatives = make_batch(neg, vocab);
  return batch;
}

std::vector<MetricRow> run_stage(TrainState& state, const StageConfig& config, std::span<const PairRecord> records,
                                 const RunOptions& options) {
  config.validate();
  if (records.empty()) throw ContractError("training stage needs a non-empty dataset");
  if (config.use_hard_negatives) {
    const bool all_negs = std::all_of(records.begin(), records.end(), [](const PairRecord& r) { return r.text_neg.has_value(); });
    if (!all_negs) throw ConfigError("hard negatives requested but some records have no text_neg");
  }
  if (state.optimizer.config.kind != config.optimizer) {
    if (state.step != 0) throw ConfigError("cannot switch optimizer in the middle of a stage");
    OptimizerConfig oc = state.optimizer.config;
    oc.kind = config.optimizer;
    state.optimizer = make_optimizer_state(oc, state.model.params);
  }
  if (records.size() < static_cast<std::size_t>(config.batch_size)) {
    warn("dataset has " + std::to_string(records.size()) + " records, fewer than batch_size " +
         std::to_string(config.batch_size) + "; batches wrap across reshuffled epochs");
  }

  std::vector<PairRecord> canonical(records.begin(), records.end());
  std::sort(canonical.begin(), canonical.end());

  state.seed = config.seed;
  const ByteVocab vocab = ByteVocab::for_config(state.model.config);
  const LossConfig loss_config{config.temperature, config.use_hard_negatives};
  std::vector<MetricRow> metrics;
  std::int64_t steps_this_call = 0;
  while (state.step < config.total_steps) {
    if (options.max_steps && steps_this_call >= *options.max_steps) break;
    const std::int64_t step = state.step;
    const auto rows = batch_indices(canonical.size(), static_cast<std::size_t>(config.batch_size), config.seed, step);
    const PairBatch batch = make_pair_batch(canonical, rows, vocab, config.use_hard_negatives);

    LossAndGradients lg = loss_forward_backward(state.model, batch, config.strategy, loss_config);
    if (config.clip_norm > 0.0) clip_global_norm(lg.gradients, config.clip_norm);
    const double lr = lr_at(step, config);
    optimizer_step(state.model.params, state.optimizer, lg.gradients, lr);
    ++state.step;
    ++steps_this_call;

    const MetricRow row{step, lr, lg.loss};
    if (step % config.log_every == 0 || state.step == config.total_steps) metrics.push_back(row);
    if (options.on_step) options.on_step(state, row);
  }
  return metrics;
}

std::vector<MetricRow> run_stage(TrainState& state, const StageConfig& config, const RunOptions& options) {
  const auto records = load_pairs(config.dataset_path);
  return run_stage(state, config, records, options);
}

TwoStageResult run_two_stage(const ModelConfig& model_config, std::uint64_t init_seed, const StageConfig& stage1,
                             std::span<const PairRecord> records1, const StageConfig& stage2,
                             std::span<const PairRecord> records2,
                             const std::optional<std::filesystem::path>& checkpoint_dir) {
  stage1.validate();
  stage2.validate();
  TwoStageResult result;
  OptimizerConfig oc;
  oc.kind = stage1.optimizer;
  result.final_state = make_train_state(model_config, init_seed, oc);
  TrainState& state = result.final_state;

  result.stage1_metrics = run_stage(state, stage1, records1);
  result.stage1_model = state.model;
  if (checkpoint_dir) save_checkpoint(*checkpoint_dir / "stage1.st5f", state);

  oc.kind = stage2.optimizer;
  state.optimizer = make_optimizer_state(oc, state.model.params);
  state.step = 0;
  result.stage2_metrics = run_stage(state, stage2, records2);
  if (checkpoint_dir) save_checkpoint(*checkpoint_dir / "stage2.st5f", state);
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "step,lr,loss\n" << std::setprecision(17);
  for (const auto& r : rows) out << r.step << ',' << r.lr << ',' << r.loss << '\n';
}

}  // namespace st5

#include "st5/bench.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <new>
#include <random>
#include <sstream>

#include <Eigen/Core>

#include "st5/backbone.hpp"

namespace st5 {

void BenchSpec::validate() const {
  if (presets.empty() || seq_lens.empty() || batch_sizes.empty()) {
    throw ConfigError("bench spec needs at least one preset, seq_len and batch size");
  }
  for (SizePreset p : presets) {
    const ModelConfig c = ModelConfig::preset(p);
    for (auto L : seq_lens) {
      if (L < 1 || L > c.max_seq_len) {
        throw ConfigError("seq_len " + std::to_string(L) + " outside [1, " + std::to_string(c.max_seq_len) +
                          "] for preset " + to_string(p));
      }
    }
  }
  for (auto b : batch_sizes) {
    if (b < 1) throw ConfigError("batch sizes must be positive");
  }
  if (warmup_iters < 0) throw ConfigError("warmup_iters must be >= 0");
  if (measure_iters < 3) throw ConfigError("measure_iters must be >= 3");
}

std::uint64_t estimated_forward_bytes(const ModelConfig& c, std::int64_t seq_len, std::int64_t batch_size) {
  const auto B = static_cast<std::uint64_t>(batch_size), L = static_cast<std::uint64_t>(seq_len);
  const auto d = static_cast<std::uint64_t>(c.d_model), ff = static_cast<std::uint64_t>(c.d_ff);
  const auto H = static_cast<std::uint64_t>(c.n_heads);
  const auto layers = static_cast<std::uint64_t>(c.n_layers_enc + c.n_layers_dec);
  // the inference tape still keeps every intermediate value
  return sizeof(double) * layers * (B * L * (10 * d + 2 * ff) + 3 * B * H * L * L);
}

TokenBatch synthetic_token_batch(const ModelConfig& config, std::int64_t seq_len, std::int64_t batch_size,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TokenBatch batch{IntMatrix(batch_size, seq_len), IntMatrix::Ones(batch_size, seq_len)};
  const auto span = static_cast<std::uint64_t>(config.vocab_size - 3);
  for (Index i = 0; i < batch.ids.size(); ++i) batch.ids.data()[i] = 3 + static_cast<std::int32_t>(rng() % span);
  return batch;
}

BenchRow measure_throughput(const EncoderDecoderModel& model, std::int64_t seq_len, std::int64_t batch_size,
                            std::int64_t warmup, std::int64_t iters, ExtractionStrategy strategy, std::uint64_t seed,
                            std::uint64_t memory_limit_bytes) {
  if (iters < 3) throw ParameterError("measure_iters must be >= 3");
  if (warmup < 0) throw ParameterError("warmup must be >= 0");
  if (seq_len < 1 || seq_len > model.config.max_seq_len) {
    throw LengthError("seq_len " + std::to_string(seq_len) + " outside [1, " +
                      std::to_string(model.config.max_seq_len) + "]");
  }
  if (batch_size < 1) throw ParameterError("batch_size must be positive");
  const auto need = estimated_forward_bytes(model.config, seq_len, batch_size);
  if (need > memory_limit_bytes) {
    throw CapacityError("forward pass needs about " + std::to_string(need >> 20) + " MiB, limit is " +
                        std::to_string(memory_limit_bytes >> 20) + " MiB");
  }

  const TokenBatch batch = synthetic_token_batch(model.config, seq_len, batch_size, seed);
  const Tensor& projection = model.projection();
  auto forward = [&] {
    const Tensor raw = extract_raw(model, batch, strategy);
    return project_and_normalize(raw, projection, strategy).rows(0, 0);
  };

  using Clock = std::chrono::steady_clock;
  double sink = 0.0;
  try {
    for (std::int64_t i = 0; i < warmup; ++i) sink += forward();
    std::vector<double> seconds;
    seconds.reserve(static_cast<std::size_t>(iters));
    for (std::int64_t i = 0; i < iters; ++i) {
      const auto t0 = Clock::now();
      sink += forward();
      seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
    if (!std::isfinite(sink)) throw NumericError("benchmark forward pass produced non-finite values");

    double total = 0.0, mean_rate = 0.0;
    std::vector<double> rates;
    for (double s : seconds) {
      total += s;
      rates.push_back(static_cast<double>(batch_size) / s);
      mean_rate += rates.back();
    }
    mean_rate /= static_cast<double>(iters);
    double var = 0.0;
    for (double r : rates) var += (r - mean_rate) * (r - mean_rate);
    var /= static_cast<double>(iters - 1);

    BenchRow row;
    row.preset = to_string(model.config.size_preset);
    row.seq_len = seq_len;
    row.batch_size = batch_size;
    row.examples_per_second = static_cast<double>(iters * batch_size) / total;
    row.stddev = std::sqrt(var);
    row.threads = Eigen::nbThreads();
    return row;
  } catch (const std::bad_alloc&) {
    throw CapacityError("out of memory at seq_len " + std::to_string(seq_len) + ", batch " +
                        std::to_string(batch_size));
  }
}

SweepResult run_sweep(const BenchSpec& spec) {
  spec.validate();
  SweepResult result;
  for (SizePreset p : spec.presets) {
    const ModelConfig config = ModelConfig::preset(p);
    const EncoderDecoderModel model = init_model(config, spec.seed);
    for (auto L : spec.seq_lens) {
      for (auto B : spec.batch_sizes) {
        try {
          result.rows.push_back(measure_throughput(model, L, B, spec.warmup_iters, spec.measure_iters, spec.strategy,
                                                   spec.seed, spec.memory_limit_bytes));
        } catch (const Error& e) {
          result.failures.push_back({to_string(p), L, B, e.what()});
        }
      }
    }
  }
  return result;
}

void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "preset,seq_len,batch_size,examples_per_sec,stddev,threads\n" << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.preset << ',' << r.seq_len << ',' << r.batch_size << ',' << r.examples_per_second << ',' << r.stddev
        << ',' << r.threads << '\n';
  }
}

std::vector<BenchRow> read_bench_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::string source = path.string();
  std::string line;
  if (!std::getline(in, line) || line != "preset,seq_len,batch_size,examples_per_sec,stddev,threads") {
    throw ParseError(source, 1, "unexpected bench CSV header");
  }
  std::vector<BenchRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<std::string> cols;
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (cols.size() != 6) throw ParseError(source, line_no, "expected 6 columns");
    try {
      rows.push_back({cols[0], std::stoll(cols[1]), std::stoll(cols[2]), std::stod(cols[3]), std::stod(cols[4]),
                      std::stoll(cols[5])});
    } catch (const std::exception&) {
      throw ParseError(source, line_no, "malformed number");
    }
  }
  return rows;
}

std::string render_bench_table(const SweepResult& result) {
  std::ostringstream out;
  out << "forward pass only (extract, project, normalize); tokenization and I/O excluded\n";
  std::string current;
  for (const auto& r : result.rows) {
    if (r.preset != current) {
      current = r.preset;
      out << '\n' << "[" << current << "]  threads=" << r.threads << '\n'
          << std::setw(8) << "seq_len" << std::setw(8) << "batch" << std::setw(16) << "examples/s" << std::setw(12)
          << "stddev" << '\n';
    }
    out << std::setw(8) << r.seq_len << std::setw(8) << r.batch_size << std::fixed << std::setprecision(1)
        << std::setw(16) << r.examples_per_second << std::setw(12) << r.stddev << '\n';
    out.unsetf(std::ios::fixed);
  }
  for (const auto& f : result.failures) {
    out << "failed: " << f.preset << " seq_len=" << f.seq_len << " batch=" << f.batch_size << ": " << f.message
        << '\n';
  }
  return out.str();
}

}  // namespace st5

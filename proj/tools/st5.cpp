// st5: train, embed, evaluate and benchmark toy sentence encoders.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "st5/bench.hpp"
#include "st5/checkpoint.hpp"
#include "st5/embedder.hpp"
#include "st5/evaluation.hpp"
#include "st5/hashing.hpp"
#include "st5/log.hpp"
#include "st5/synthetic.hpp"
#include "st5/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

// Flat JSON object -> option values of the chosen subcommand. CLI11 only
// reads config files on the root app, so the subcommand is looked up late.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<std::string> parents;
    const auto subs = root_->get_subcommands();
    if (!subs.empty()) parents.push_back(subs.front()->get_name());
    std::vector<CLI::ConfigItem> out;
    collect(j, parents, out);
    return out;
  }

 private:
  const CLI::App* root_;

  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConversionError("unsupported config value " + v.dump());
  }

  static void collect(const nlohmann::json& j, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it->is_object()) {
        auto p = parents;
        p.push_back(it.key());
        collect(*it, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array()) {
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(*it));
      }
      out.push_back(std::move(item));
    }
  }
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw st5::ConfigError(std::string(what) + " path is empty");
  if (!fs::is_regular_file(path)) throw st5::ConfigError(std::string(what) + " '" + path + "' does not exist");
}

void require_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw st5::ConfigError("output directory '" + parent.string() + "' does not exist");
  }
}

class RunManifest {
 public:
  explicit RunManifest(std::string command) : command_(std::move(command)), started_(utc_now()) {}

  ordered_json& config() { return config_; }
  void seed(std::uint64_t s) { seed_ = s; }
  void dataset(const std::string& path) { datasets_[path] = st5::sha256_file(path); }
  void input_checkpoint(const std::string& path) { checkpoints_in_[path] = st5::sha256_file(path); }
  void output_checkpoint(const std::string& path) { checkpoints_out_[path] = st5::sha256_file(path); }
  void output(const std::string& path) { outputs_[path] = st5::sha256_file(path); }

  ordered_json to_json(bool finished) const {
    ordered_json j;
    j["schema"] = "st5-run-manifest v1";
    j["command"] = command_;
    j["tool_version"] = kToolVersion;
    j["config"] = config_;
    j["seed"] = seed_ ? ordered_json(*seed_) : ordered_json(nullptr);
    j["datasets"] = datasets_;
    j["input_checkpoints"] = checkpoints_in_;
    j["output_checkpoints"] = checkpoints_out_;
    j["outputs"] = outputs_;
    j["started_at"] = started_;
    j["finished_at"] = finished ? ordered_json(utc_now()) : ordered_json(nullptr);
    return j;
  }

  void write(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw st5::IoError("cannot write run manifest '" + path.string() + "'");
    out << to_json(true).dump(2) << '\n';
  }

  void print_dry_run() const { std::cout << to_json(false).dump(2) << '\n'; }

 private:
  std::string command_;
  std::string started_;
  ordered_json config_ = ordered_json::object();
  std::optional<std::uint64_t> seed_;
  std::map<std::string, std::string> datasets_, checkpoints_in_, checkpoints_out_, outputs_;
};

// --ckpt, or --preset plus --seed for a random init.
struct ModelSource {
  std::string ckpt;
  std::string preset = "tiny";
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--ckpt", ckpt, "Checkpoint to load");
    app->add_option("--preset", preset, "Size preset for a random-init model (tiny, small, base-toy)");
    app->add_option("--seed", seed, "Init seed for a random-init model");
  }

  void validate() const {
    if (!ckpt.empty()) {
      require_file(ckpt, "checkpoint");
    } else {
      st5::parse_size_preset(preset);
      if (!seed) throw st5::ConfigError("without --ckpt a random-init model needs --seed");
    }
  }

  void record(RunManifest& m) const {
    if (!ckpt.empty()) {
      m.config()["ckpt"] = ckpt;
      m.input_checkpoint(ckpt);
    } else {
      m.config()["preset"] = preset;
      m.seed(*seed);
    }
  }

  st5::EncoderDecoderModel load() const {
    if (!ckpt.empty()) return st5::load_checkpoint(ckpt).model;
    return st5::init_model(st5::ModelConfig::preset(st5::parse_size_preset(preset)), *seed);
  }
};

struct EmbedChoice {
  std::string strategy = "enc_mean";
  bool raw = false;

  void add(CLI::App* app) {
    app->add_option("--strategy", strategy, "enc_first, enc_mean or encdec_first");
    app->add_flag("--raw", raw, "Use raw backbone vectors instead of projected unit vectors");
  }
  st5::ExtractionStrategy parsed() const { return st5::parse_strategy(strategy); }
  void record(RunManifest& m) const {
    m.config()["strategy"] = strategy;
    m.config()["projected"] = !raw;
  }
};

std::string default_manifest(const std::string& explicit_path, const std::string& out, const std::string& command) {
  if (!explicit_path.empty()) return explicit_path;
  if (!out.empty()) return out + ".run.json";
  return "st5-" + command + ".run.json";
}

// ---- train ----

struct TrainArgs {
  std::string stage1, stage2, preset = "tiny", out_dir, strategy = "enc_mean", optimizer = "adafactor", manifest;
  std::vector<std::int64_t> steps{100};
  std::optional<std::uint64_t> seed;
  std::int64_t batch_size = 16, log_every = 1;
  double lr = 1e-3, warm = 0.1, temperature = 0.01, clip_norm = 1.0;
  bool hard_negatives = false, dry_run = false;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.add_subcommand("train", "Contrastive fine-tuning, one or two stages");
  c->add_option("--stage1", a.stage1, "Stage 1 pairs (.jsonl or .tsv)")->required();
  c->add_option("--stage2", a.stage2, "Stage 2 pairs or triples");
  c->add_option("--preset", a.preset, "Size preset");
  c->add_option("--steps", a.steps, "Steps per stage, e.g. 200,200")->delimiter(',');
  c->add_option("--seed", a.seed, "Seed for init and batch order");
  c->add_option("--out-dir", a.out_dir, "Directory for checkpoints, metrics and manifest")->required();
  c->add_option("--batch-size", a.batch_size);
  c->add_option("--lr", a.lr, "Peak learning rate");
  c->add_option("--warm", a.warm, "Fraction of steps at constant lr");
  c->add_option("--temperature", a.temperature);
  c->add_option("--strategy", a.strategy);
  c->add_option("--optimizer", a.optimizer, "adafactor or adam");
  c->add_option("--clip-norm", a.clip_norm, "Global gradient norm clip, <= 0 disables");
  c->add_option("--log-every", a.log_every);
  c->add_flag("--hard-negatives", a.hard_negatives, "Use text_neg in the last stage");
  c->add_option("--manifest", a.manifest, "Run manifest path (default <out-dir>/manifest.json)");
  c->add_flag("--dry-run", a.dry_run, "Validate and print the manifest, write nothing");
}

int cmd_train(const TrainArgs& a) {
  if (!a.seed) throw st5::ConfigError("train requires --seed");
  require_file(a.stage1, "stage 1 dataset");
  const bool two = !a.stage2.empty();
  if (two) require_file(a.stage2, "stage 2 dataset");
  if (a.steps.empty() || a.steps.size() > 2) throw st5::ConfigError("--steps takes one or two values");
  if (a.steps.size() == 2 && !two) throw st5::ConfigError("two --steps values given but no --stage2");
  const st5::ModelConfig config = st5::ModelConfig::preset(st5::parse_size_preset(a.preset));

  auto stage = [&](const std::string& path, std::int64_t steps, bool negatives) {
    st5::StageConfig s;
    s.dataset_path = path;
    s.batch_size = a.batch_size;
    s.total_steps = steps;
    s.peak_lr = a.lr;
    s.warm_fraction = a.warm;
    s.temperature = a.temperature;
    s.strategy = st5::parse_strategy(a.strategy);
    s.seed = *a.seed;
    s.use_hard_negatives = negatives;
    s.optimizer = st5::parse_optimizer_kind(a.optimizer);
    s.clip_norm = a.clip_norm;
    s.log_every = a.log_every;
    s.validate();
    return s;
  };
  const st5::StageConfig s1 = stage(a.stage1, a.steps.front(), a.hard_negatives && !two);
  std::optional<st5::StageConfig> s2;
  if (two) s2 = stage(a.stage2, a.steps.back(), a.hard_negatives);

  RunManifest m("train");
  m.seed(*a.seed);
  auto& c = m.config();
  c["model"] = st5::config_json(config);
  c["stage1"] = a.stage1;
  if (two) c["stage2"] = a.stage2;
  c["steps"] = a.steps;
  c["batch_size"] = a.batch_size;
  c["lr"] = a.lr;
  c["warm"] = a.warm;
  c["temperature"] = a.temperature;
  c["strategy"] = a.strategy;
  c["optimizer"] = a.optimizer;
  c["clip_norm"] = a.clip_norm;
  c["hard_negatives"] = a.hard_negatives;
  c["log_every"] = a.log_every;
  m.dataset(a.stage1);
  if (two) m.dataset(a.stage2);

  if (a.dry_run) {
    m.print_dry_run();
    return 0;
  }

  const fs::path out(a.out_dir);
  fs::create_directories(out);
  const auto records1 = st5::load_pairs(a.stage1);
  st5::OptimizerConfig oc;
  oc.kind = s1.optimizer;
  if (two) {
    const auto records2 = st5::load_pairs(a.stage2);
    const auto result = st5::run_two_stage(config, *a.seed, s1, records1, *s2, records2, out);
    st5::write_metrics_csv(out / "metrics_stage1.csv", result.stage1_metrics);
    st5::write_metrics_csv(out / "metrics_stage2.csv", result.stage2_metrics);
    m.output_checkpoint((out / "stage1.st5f").string());
    m.output_checkpoint((out / "stage2.st5f").string());
    m.output((out / "metrics_stage2.csv").string());
    std::cout << "stage 2 final loss " << result.stage2_metrics.back().loss << '\n';
  } else {
    st5::TrainState state = st5::make_train_state(config, *a.seed, oc);
    const auto metrics = st5::run_stage(state, s1, records1);
    st5::save_checkpoint(out / "stage1.st5f", state);
    st5::write_metrics_csv(out / "metrics_stage1.csv", metrics);
    m.output_checkpoint((out / "stage1.st5f").string());
    std::cout << "stage 1 final loss " << metrics.back().loss << '\n';
  }
  m.output((out / "metrics_stage1.csv").string());
  m.write(a.manifest.empty() ? out / "manifest.json" : fs::path(a.manifest));
  return 0;
}

// ---- embed ----

struct EmbedArgs {
  ModelSource model;
  EmbedChoice choice;
  std::string in, out, manifest;
  std::size_t batch_size = 32, threads = 0;
  bool dry_run = false;
};

void add_embed(CLI::App& app, EmbedArgs& a) {
  auto* c = app.add_subcommand("embed", "Embed one sentence per line");
  a.model.add(c);
  a.choice.add(c);
  c->add_option("--in", a.in, "Input text file, one sentence per line")->required();
  c->add_option("--out", a.out, "Embedding dump")->required();
  c->add_option("--batch-size", a.batch_size);
  c->add_option("--threads", a.threads, "Worker threads (0 = ST5_THREADS or all cores)");
  c->add_option("--manifest", a.manifest, "Run manifest path (default <out>.run.json)");
  c->add_flag("--dry-run", a.dry_run);
}

int cmd_embed(const EmbedArgs& a) {
  a.model.validate();
  const auto strategy = a.choice.parsed();
  require_file(a.in, "input");
  require_parent_dir(a.out);
  if (a.batch_size == 0) throw st5::ConfigError("--batch-size must be positive");

  RunManifest m("embed");
  a.model.record(m);
  a.choice.record(m);
  m.config()["in"] = a.in;
  m.config()["out"] = a.out;
  m.config()["batch_size"] = a.batch_size;
  m.dataset(a.in);
  if (a.dry_run) {
    m.print_dry_run();
    return 0;
  }

  std::ifstream in(a.in);
  std::vector<std::string> texts;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    texts.push_back(line);
  }
  if (texts.empty()) st5::warn("input '" + a.in + "' is empty; writing an empty dump");
  const auto model = a.model.load();
  const auto corpus = st5::embed_corpus(model, texts, strategy, !a.choice.raw, a.batch_size, a.threads);
  st5::write_embedding_dump(a.out, corpus);
  st5::write_embedding_manifest(a.out + ".manifest.json", corpus);
  m.output(a.out);
  m.output(a.out + ".manifest.json");
  m.write(default_manifest(a.manifest, a.out, "embed"));
  std::cout << "embedded " << texts.size() << " sentences, dim " << corpus.embeddings.dim() << '\n';
  return 0;
}

// ---- eval-sts / eval-transfer ----

struct EvalStsArgs {
  ModelSource model;
  EmbedChoice choice;
  std::vector<std::string> data;
  std::string out, manifest;
  bool dry_run = false;
};

void add_eval_sts(CLI::App& app, EvalStsArgs& a) {
  auto* c = app.add_subcommand("eval-sts", "Spearman x100 on STS files");
  a.model.add(c);
  a.choice.add(c);
  c->add_option("--data", a.data, "STS TSV file(s)")->required();
  c->add_option("--out", a.out, "EvalReport JSON");
  c->add_option("--manifest", a.manifest);
  c->add_flag("--dry-run", a.dry_run);
}

void finish_report(st5::EvalReport& report, const ModelSource& source, const st5::EncoderDecoderModel& model,
                   const EmbedChoice& choice, RunManifest& m, const std::string& out, const std::string& manifest,
                   const std::string& command) {
  report.strategy = choice.strategy;
  report.projected = !choice.raw;
  report.config_sha256 = st5::config_sha256(model.config);
  report.checkpoint_sha256 = source.ckpt.empty() ? "" : st5::sha256_file(source.ckpt);
  std::cout << report.summary_text();
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw st5::IoError("cannot write '" + out + "'");
    f << report.to_json().dump(2) << '\n';
    f.close();
    m.output(out);
  }
  m.write(default_manifest(manifest, out, command));
}

int cmd_eval_sts(const EvalStsArgs& a) {
  a.model.validate();
  const auto strategy = a.choice.parsed();
  for (const auto& d : a.data) require_file(d, "STS dataset");
  if (!a.out.empty()) require_parent_dir(a.out);

  RunManifest m("eval-sts");
  a.model.record(m);
  a.choice.record(m);
  m.config()["data"] = a.data;
  for (const auto& d : a.data) m.dataset(d);
  if (a.dry_run) {
    m.print_dry_run();
    return 0;
  }

  const auto model = a.model.load();
  st5::EvalReport report;
  std::vector<st5::STSExample> pooled;
  for (const auto& d : a.data) {
    const auto examples = st5::load_sts(d);
    report.scores.push_back({fs::path(d).filename().string(), "sts", st5::sha256_file(d),
                             st5::eval_sts(model, examples, strategy, !a.choice.raw)});
    pooled.insert(pooled.end(), examples.begin(), examples.end());
  }
  if (a.data.size() > 1) {
    std::string joined;
    for (const auto& s : report.scores) joined += s.sha256;
    report.scores.push_back({"all", "sts", st5::sha256_hex(joined), st5::eval_sts(model, pooled, strategy, !a.choice.raw)});
  }
  finish_report(report, a.model, model, a.choice, m, a.out, a.manifest, "eval-sts");
  return 0;
}

struct EvalTransferArgs {
  ModelSource model;
  EmbedChoice choice;
  std::string data, split, out, manifest;
  double l2 = 1e-3;
  std::int64_t max_iterations = 20000;
  bool dry_run = false;
};

void add_eval_transfer(CLI::App& app, EvalTransferArgs& a) {
  auto* c = app.add_subcommand("eval-transfer", "Linear-probe accuracy x100 on a transfer task");
  a.model.add(c);
  a.choice.add(c);
  c->add_option("--data", a.data, "TSV label<TAB>text")->required();
  c->add_option("--split", a.split, "JSON split manifest {train: [...], test: [...]}")->required();
  c->add_option("--l2", a.l2, "Probe L2 penalty");
  c->add_option("--max-iterations", a.max_iterations);
  c->add_option("--out", a.out, "EvalReport JSON");
  c->add_option("--manifest", a.manifest);
  c->add_flag("--dry-run", a.dry_run);
}

int cmd_eval_transfer(const EvalTransferArgs& a) {
  a.model.validate();
  const auto strategy = a.choice.parsed();
  require_file(a.data, "transfer dataset");
  require_file(a.split, "split manifest");
  if (!(a.l2 > 0.0)) throw st5::ConfigError("--l2 must be positive");
  if (!a.out.empty()) require_parent_dir(a.out);

  RunManifest m("eval-transfer");
  a.model.record(m);
  a.choice.record(m);
  m.config()["data"] = a.data;
  m.config()["split"] = a.split;
  m.config()["l2"] = a.l2;
  m.config()["max_iterations"] = a.max_iterations;
  m.dataset(a.data);
  m.dataset(a.split);
  if (a.dry_run) {
    m.print_dry_run();
    return 0;
  }

  const auto model = a.model.load();
  const auto ds = st5::load_transfer(a.data, a.split);
  st5::ProbeOptions po;
  po.l2_penalty = a.l2;
  po.max_iterations = a.max_iterations;
  st5::EvalReport report;
  report.scores.push_back({fs::path(a.data).filename().string(), "transfer",
                           st5::sha256_hex(st5::sha256_file(a.data) + st5::sha256_file(a.split)),
                           st5::eval_transfer(model, ds, strategy, !a.choice.raw, po)});
  finish_report(report, a.model, model, a.choice, m, a.out, a.manifest, "eval-transfer");
  return 0;
}

// ---- diagnose ----

struct DiagnoseArgs {
  ModelSource model;
  EmbedChoice choice;
  std::string data, out, manifest, exponent = "squared";
  double threshold = 4.0, alpha = 2.0, t = 2.0;
  bool dry_run = false;
};

void add_diagnose(CLI::App& app, DiagnoseArgs& a) {
  auto* c = app.add_subcommand("diagnose", "Alignment, uniformity and Spearman on an STS file");
  a.model.add(c);
  a.choice.add(c);
  c->add_option("--data", a.data, "STS TSV file")->required();
  c->add_option("--threshold", a.threshold, "Pairs scoring above this are positives");
  c->add_option("--alpha", a.alpha);
  c->add_option("--t", a.t);
  c->add_option("--uniformity-exponent", a.exponent, "squared or linear");
  c->add_option("--out", a.out, "JSON output");
  c->add_option("--manifest", a.manifest);
  c->add_flag("--dry-run", a.dry_run);
}

int cmd_diagnose(const DiagnoseArgs& a) {
  a.model.validate();
  const auto strategy = a.choice.parsed();
  require_file(a.data, "STS dataset");
  if (a.exponent != "squared" && a.exponent != "linear") {
    throw st5::ConfigError("unknown uniformity exponent '" + a.exponent + "' (valid: squared, linear)");
  }
  if (!a.out.empty()) require_parent_dir(a.out);

  RunManifest m("diagnose");
  a.model.record(m);
  a.choice.record(m);
  m.config()["data"] = a.data;
  m.config()["threshold"] = a.threshold;
  m.config()["alpha"] = a.alpha;
  m.config()["t"] = a.t;
  m.config()["uniformity_exponent"] = a.exponent;
  m.dataset(a.data);
  if (a.dry_run) {
    m.print_dry_run();
    return 0;
  }

  const auto model = a.model.load();
  st5::DiagnoseOptions o;
  o.threshold = a.threshold;
  o.alpha = a.alpha;
  o.t = a.t;
  o.exponent = a.exponent == "linear" ? st5::UniformityExponent::Linear : st5::UniformityExponent::Squared;
  const auto d = st5::diagnose(model, st5::load_sts(a.data), strategy, !a.choice.raw, o);
  ordered_json j;
  j["schema"] = "st5-diagnosis v1";
  j["alignment"] = d.alignment ? ordered_json(*d.alignment) : ordered_json(nullptr);
  j["uniformity"] = d.uniformity;
  j["spearman100"] = d.spearman100;
  j["positive_pairs"] = d.positive_pairs;
  j["sentences"] = d.sentences;
  j["dataset_sha256"] = st5::sha256_file(a.data);
  std::cout << j.dump(2) << '\n';
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    f << j.dump(2) << '\n';
    f.close();
    m.output(a.out);
  }
  m.write(default_manifest(a.manifest, a.out, "diagnose"));
  return 0;
}

// ---- bench ----

struct BenchArgs {
  std::vector<std::string> presets{"tiny", "small"};
  std::vector<std::int64_t> seq_lens{32, 64, 128, 256}, batch_sizes{1, 8};
  std::int64_t warmup = 3, iters = 5;
  std::uint64_t seed = 0;
  std::string strategy = "enc_mean", out, manifest;
  bool dry_run = false;
};

void add_bench(CLI::App& app, BenchArgs& a) {
  auto* c = app.add_subcommand("bench", "Forward-pass throughput sweep");
  c->add_option("--presets", a.presets)->delimiter(',');
  c->add_option("--seq-lens", a.seq_lens)->delimiter(',');
  c->add_option("--batch-sizes", a.batch_sizes)->delimiter(',');
  c->add_option("--warmup", a.warmup);
  c->add_option("--iters", a.iters);
  c->add_option("--seed", a.seed);
  c->add_option("--strategy", a.strategy);
  c->add_option("--out", a.out, "CSV output")->required();
  c->add_option("--manifest", a.manifest);
  c->add_flag("--dry-run", a.dry_run);
}

int cmd_bench(const BenchArgs& a) {
  st5::BenchSpec spec;
  spec.presets.clear();
  for (const auto& p : a.presets) spec.presets.push_back(st5::parse_size_preset(p));
  spec.seq_lens = a.seq_lens;
  spec.batch_sizes = a.batch_sizes;
  spec.warmup_iters = a.warmup;
  spec.measure_iters = a.iters;
  spec.seed = a.seed;
  spec.strategy = st5::parse_strategy(a.strategy);
  spec.validate();
  require_parent_dir(a.out);

  RunManifest m("bench");
  m.seed(a.seed);
  auto& c = m.config();
  c["presets"] = a.presets;
  c["seq_lens"] = a.seq_lens;
  c["batch_sizes"] = a.batch_sizes;
  c["warmup"] = a.warmup;
  c["iters"] = a.iters;
  c["strategy"] = a.strategy;
  c["out"] = a.out;
  if (a.dry_run) {
    m.print_dry_run();
    return 0;
  }

  const auto result = st5::run_sweep(spec);
  st5::write_bench_csv(a.out, result.rows);
  std::cout << st5::render_bench_table(result);
  m.output(a.out);
  m.write(default_manifest(a.manifest, a.out, "bench"));
  return result.rows.empty() ? 1 : 0;
}

// ---- synth ----

struct SynthArgs {
  std::string kind, out, split_out, manifest;
  std::size_t n = 500, n_test = 200;
  std::optional<std::uint64_t> seed;
  int forms = 1;
  bool dry_run = false;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* c = app.add_subcommand("synth", "Write a synthetic toy-language corpus");
  c->add_option("--kind", a.kind, "paraphrase, qa, nli, sts or transfer")->required();
  c->add_option("--n", a.n, "Records (train records for transfer)");
  c->add_option("--n-test", a.n_test, "Test records for transfer");
  c->add_option("--seed", a.seed)->required();
  c->add_option("--forms", a.forms, "Synonyms per concept used by nli (1-3)");
  c->add_option("--out", a.out)->required();
  c->add_option("--split-out", a.split_out, "Split manifest for transfer");
  c->add_option("--manifest", a.manifest);
  c->add_flag("--dry-run", a.dry_run);
}

int cmd_synth(const SynthArgs& a) {
  static const std::vector<std::string> kinds{"paraphrase", "qa", "nli", "sts", "transfer"};
  if (std::find(kinds.begin(), kinds.end(), a.kind) == kinds.end()) {
    throw st5::ConfigError("unknown kind '" + a.kind + "' (valid: paraphrase, qa, nli, sts, transfer)");
  }
  if (a.kind == "transfer" && a.split_out.empty()) throw st5::ConfigError("transfer needs --split-out");
  if (a.forms < 1 || a.forms > st5::synth::kForms) throw st5::ConfigError("--forms must lie in [1, 3]");
  require_parent_dir(a.out);

  RunManifest m("synth");
  m.seed(*a.seed);
  m.config()["kind"] = a.kind;
  m.config()["n"] = a.n;
  m.config()["forms"] = a.forms;
  if (a.dry_run) {
    m.print_dry_run();
    return 0;
  }

  namespace sy = st5::synth;
  if (a.kind == "paraphrase") st5::write_pairs_jsonl(a.out, sy::paraphrase_pairs(a.n, *a.seed));
  if (a.kind == "qa") st5::write_pairs_jsonl(a.out, sy::qa_pairs(a.n, *a.seed));
  if (a.kind == "nli") st5::write_pairs_jsonl(a.out, sy::nli_triples(a.n, *a.seed, a.forms));
  if (a.kind == "sts") st5::write_sts(a.out, sy::graded_sts(a.n, *a.seed));
  if (a.kind == "transfer") {
    const auto ds = sy::subject_transfer(a.n, a.n_test, *a.seed);
    std::ofstream f(a.out);
    nlohmann::json split = {{"train", nlohmann::json::array()}, {"test", nlohmann::json::array()}};
    std::size_t row = 0;
    for (const auto* part : {&ds.train, &ds.test}) {
      const char* key = part == &ds.train ? "train" : "test";
      for (std::size_t i = 0; i < part->texts.size(); ++i, ++row) {
        f << ds.label_names[static_cast<std::size_t>(part->labels[i])] << '\t' << part->texts[i] << '\n';
        split[key].push_back(row);
      }
    }
    f.close();
    std::ofstream s(a.split_out);
    s << split.dump() << '\n';
    s.close();
    m.output(a.split_out);
  }
  m.output(a.out);
  m.write(default_manifest(a.manifest, a.out, "synth"));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy sentence encoders built on an encoder-decoder transformer"};
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  TrainArgs train;
  EmbedArgs embed;
  EvalStsArgs eval_sts;
  EvalTransferArgs eval_transfer;
  DiagnoseArgs diag;
  BenchArgs bench;
  SynthArgs synth;
  add_train(app, train);
  add_embed(app, embed);
  add_eval_sts(app, eval_sts);
  add_eval_transfer(app, eval_transfer);
  add_diagnose(app, diag);
  add_bench(app, bench);
  add_synth(app, synth);
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.set_config("--config", "", "JSON file of option values for the subcommand; flags override it");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "train") return cmd_train(train);
    if (name == "embed") return cmd_embed(embed);
    if (name == "eval-sts") return cmd_eval_sts(eval_sts);
    if (name == "eval-transfer") return cmd_eval_transfer(eval_transfer);
    if (name == "diagnose") return cmd_diagnose(diag);
    if (name == "bench") return cmd_bench(bench);
    if (name == "synth") return cmd_synth(synth);
  } catch (const st5::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

#include "st5/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "st5/hashing.hpp"
#include "st5/ops.hpp"

namespace st5 {

namespace {

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t") == std::string::npos; }

}  // namespace

std::vector<STSExample> load_sts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open STS file '" + path.string() + "'");
  const std::string source = path.string();
  std::vector<STSExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (blank(line)) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw ParseError(source, line_no, "expected 3 tab-separated columns");
    if (line.find('\t', t2 + 1) != std::string::npos) throw ParseError(source, line_no, "too many columns");
    STSExample ex{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), 0.0};
    const std::string score = line.substr(t2 + 1);
    std::size_t used = 0;
    try {
      ex.score = std::stod(score, &used);
    } catch (const std::exception&) {
      throw ParseError(source, line_no, "score '" + score + "' is not a number");
    }
    if (used != score.size()) throw ParseError(source, line_no, "score '" + score + "' is not a number");
    if (!(ex.score >= 0.0 && ex.score <= 5.0)) throw ParseError(source, line_no, "score " + score + " outside [0, 5]");
    out.push_back(std::move(ex));
  }
  return out;
}

void write_sts(const std::filesystem::path& path, std::span<const STSExample> examples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << std::setprecision(17);
  for (const auto& e : examples) out << e.sentence_a << '\t' << e.sentence_b << '\t' << e.score << '\n';
}

TransferDataset load_transfer(const std::filesystem::path& path, const std::filesystem::path& split_manifest) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transfer file '" + path.string() + "'");
  const std::string source = path.string();
  std::vector<std::string> texts;
  std::vector<int> labels;
  std::map<std::string, int> ids;
  TransferDataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (blank(line)) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(source, line_no, "expected `label<TAB>text`");
    const std::string label = line.substr(0, tab);
    if (label.empty()) throw ParseError(source, line_no, "empty label");
    auto [it, inserted] = ids.emplace(label, static_cast<int>(ds.label_names.size()));
    if (inserted) ds.label_names.push_back(label);
    labels.push_back(it->second);
    texts.push_back(line.substr(tab + 1));
  }

  std::ifstream ms(split_manifest);
  if (!ms) throw IoError("cannot open split manifest '" + split_manifest.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(split_manifest.string(), 0, std::string("invalid JSON: ") + e.what());
  }
  auto take = [&](const char* key, TransferSplit& split) {
    if (!j.contains(key) || !j[key].is_array()) {
      throw ParseError(split_manifest.string(), 0, std::string("missing array '") + key + "'");
    }
    for (const auto& v : j[key]) {
      if (!v.is_number_integer()) throw ParseError(split_manifest.string(), 0, "split indices must be integers");
      const auto idx = v.get<std::int64_t>();
      if (idx < 0 || idx >= static_cast<std::int64_t>(texts.size())) {
        throw ParseError(split_manifest.string(), 0, "split index " + std::to_string(idx) + " out of range");
      }
      split.texts.push_back(texts[static_cast<std::size_t>(idx)]);
      split.labels.push_back(labels[static_cast<std::size_t>(idx)]);
    }
  };
  take("train", ds.train);
  take("test", ds.test);
  const std::set<int> classes(ds.train.labels.begin(), ds.train.labels.end());
  if (classes.size() < 2) throw ContractError("transfer train split needs at least 2 classes");
  if (ds.test.texts.empty()) throw ContractError("transfer test split is empty");
  return ds;
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw DimensionError("correlation of lists with lengths " + std::to_string(x.size()) + " and " +
                         std::to_string(y.size()));
  }
  if (x.size() < 2) throw DimensionError("correlation needs at least 2 points");
  const auto n = static_cast<Index>(x.size());
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), n), yv(y.data(), n);
  const Eigen::VectorXd xc = xv.array() - xv.mean();
  const Eigen::VectorXd yc = yv.array() - yv.mean();
  const double sxx = xc.squaredNorm(), syy = yc.squaredNorm();
  if (sxx == 0.0 || syy == 0.0) throw DegenerateInputError("correlation is undefined for constant input");
  return std::clamp(xc.dot(yc) / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw DimensionError("spearman of lists with lengths " + std::to_string(x.size()) + " and " +
                         std::to_string(y.size()));
  }
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  return pearson(rx, ry);
}

namespace {

// Each distinct sentence embedded once, in sorted order, so its vector does
// not depend on dataset order or on duplicates elsewhere in the dataset.
struct UniqueEmbedding {
  std::map<std::string, Index> row;
  Matrix rows;
};

UniqueEmbedding embed_unique(const EncoderDecoderModel& model, std::span<const STSExample> dataset,
                             ExtractionStrategy strategy, bool projected, std::size_t batch_size) {
  UniqueEmbedding out;
  for (const auto& e : dataset) {
    out.row.emplace(e.sentence_a, 0);
    out.row.emplace(e.sentence_b, 0);
  }
  std::vector<std::string> texts;
  texts.reserve(out.row.size());
  for (auto& [text, r] : out.row) {
    r = static_cast<Index>(texts.size());
    texts.push_back(text);
  }
  out.rows = embed_corpus(model, texts, strategy, projected, batch_size).embeddings.rows;
  return out;
}

}  // namespace

std::vector<double> sts_similarities(const EncoderDecoderModel& model, std::span<const STSExample> dataset,
                                     ExtractionStrategy strategy, bool projected, std::size_t batch_size) {
  if (dataset.empty()) throw ContractError("STS dataset is empty");
  const UniqueEmbedding emb = embed_unique(model, dataset, strategy, projected, batch_size);
  std::vector<double> sims;
  sims.reserve(dataset.size());
  for (const auto& e : dataset) {
    const auto a = emb.rows.row(emb.row.at(e.sentence_a)), b = emb.rows.row(emb.row.at(e.sentence_b));
    sims.push_back(projected ? a.dot(b) : cosine(a, b));
  }
  return sims;
}

double eval_sts(const EncoderDecoderModel& model, std::span<const STSExample> dataset, ExtractionStrategy strategy,
                bool projected, std::size_t batch_size) {
  const auto sims = sts_similarities(model, dataset, strategy, projected, batch_size);
  std::vector<double> gold;
  gold.reserve(dataset.size());
  for (const auto& e : dataset) gold.push_back(e.score);
  return 100.0 * spearman(sims, gold);
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size() || labels.empty()) {
    throw DimensionError("accuracy needs equal, non-empty prediction and label lists");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double eval_transfer(const EncoderDecoderModel& model, const TransferDataset& dataset, ExtractionStrategy strategy,
                     bool projected, const ProbeOptions& options) {
  if (dataset.train.texts.empty() || dataset.test.texts.empty()) {
    throw ContractError("eval_transfer needs non-empty train and test splits");
  }
  const auto train = embed_corpus(model, dataset.train.texts, strategy, projected, 32);
  const Probe probe = train_probe(train.embeddings.rows, dataset.train.labels, options);
  const auto test = embed_corpus(model, dataset.test.texts, strategy, projected, 32);
  return 100.0 * accuracy(probe.predict(test.embeddings.rows), dataset.test.labels);
}

double alignment_loss(const Matrix& a, const Matrix& b, double alpha) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("alignment_loss: pair sides have shapes " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
  if (a.rows() == 0) throw ContractError("alignment_loss needs at least one positive pair");
  if (!(alpha > 0.0)) throw ParameterError("alignment alpha must be > 0");
  double total = 0.0;
  for (Index i = 0; i < a.rows(); ++i) total += std::pow((a.row(i) - b.row(i)).norm(), alpha);
  return total / static_cast<double>(a.rows());
}

double uniformity_loss(const Matrix& embeddings, double t, UniformityExponent exponent) {
  const Index n = embeddings.rows();
  if (n < 2) throw ContractError("uniformity_loss needs at least 2 embeddings, got " + std::to_string(n));
  if (!(t > 0.0)) throw ParameterError("uniformity t must be > 0");
  Eigen::VectorXd terms(n * (n - 1) / 2);
  Index k = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double sq = (embeddings.row(i) - embeddings.row(j)).squaredNorm();
      terms(k++) = -t * (exponent == UniformityExponent::Squared ? sq : std::sqrt(sq));
    }
  }
  return log_sum_exp(terms) - std::log(static_cast<double>(terms.size()));
}

Diagnosis diagnose(const EncoderDecoderModel& model, std::span<const STSExample> dataset,
                   ExtractionStrategy strategy, bool projected, const DiagnoseOptions& options) {
  if (dataset.empty()) throw ContractError("diagnose needs a non-empty STS dataset");
  const UniqueEmbedding emb = embed_unique(model, dataset, strategy, projected, 32);
  // Both losses live on the unit sphere; raw vectors are normalized first.
  const Matrix sphere = projected ? emb.rows : l2_normalize_rows(emb.rows);

  Diagnosis d;
  d.sentences = emb.row.size();
  std::vector<Index> pos_a, pos_b;
  std::vector<double> sims, gold;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Index ra = emb.row.at(dataset[i].sentence_a), rb = emb.row.at(dataset[i].sentence_b);
    if (dataset[i].score > options.threshold) {
      pos_a.push_back(ra);
      pos_b.push_back(rb);
    }
    sims.push_back(sphere.row(ra).dot(sphere.row(rb)));
    gold.push_back(dataset[i].score);
  }
  d.positive_pairs = pos_a.size();
  if (!pos_a.empty()) d.alignment = alignment_loss(sphere(pos_a, Eigen::all), sphere(pos_b, Eigen::all), options.alpha);
  d.uniformity = d.sentences >= 2 ? uniformity_loss(sphere, options.t, options.exponent) : 0.0;
  d.spearman100 = 100.0 * spearman(sims, gold);
  return d;
}

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json machine, summary;
  machine["strategy"] = strategy;
  machine["projected"] = projected;
  machine["checkpoint_sha256"] = checkpoint_sha256;
  machine["config_sha256"] = config_sha256;
  machine["scores"] = nlohmann::ordered_json::array();
  summary["scores"] = nlohmann::ordered_json::object();
  for (const auto& s : scores) {
    machine["scores"].push_back({{"name", s.name}, {"kind", s.kind}, {"sha256", s.sha256}, {"value", s.value}});
    summary["scores"][s.name] = round2(s.value);
  }
  machine["alignment"] = alignment ? nlohmann::ordered_json(*alignment) : nlohmann::ordered_json(nullptr);
  machine["uniformity"] = uniformity ? nlohmann::ordered_json(*uniformity) : nlohmann::ordered_json(nullptr);
  summary["alignment"] = alignment ? nlohmann::ordered_json(round2(*alignment)) : nlohmann::ordered_json(nullptr);
  summary["uniformity"] = uniformity ? nlohmann::ordered_json(round2(*uniformity)) : nlohmann::ordered_json(nullptr);
  return {{"schema", "st5-eval-report v1"}, {"summary", summary}, {"machine", machine}};
}

std::string EvalReport::summary_text() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "strategy " << strategy << (projected ? " (projected)" : " (raw)") << '\n';
  for (const auto& s : scores) {
    out << "  " << s.name << "  " << (s.kind == "sts" ? "spearman x100 " : "accuracy x100 ") << s.value << '\n';
  }
  auto opt = [&](const char* name, const std::optional<double>& v) {
    out << "  " << name << "  ";
    if (v) out << *v; else out << "n/a";
    out << '\n';
  };
  if (alignment || uniformity) {
    opt("alignment", alignment);
    opt("uniformity", uniformity);
  }
  return out.str();
}

nlohmann::ordered_json config_json(const ModelConfig& config) {
  return {{"preset", to_string(config.size_preset)},
          {"vocab_size", config.vocab_size},
          {"d_model", config.d_model},
          {"n_heads", config.n_heads},
          {"d_ff", config.d_ff},
          {"n_layers_enc", config.n_layers_enc},
          {"n_layers_dec", config.n_layers_dec},
          {"max_seq_len", config.max_seq_len},
          {"embed_dim", config.embed_dim},
          {"rel_buckets", config.rel_buckets},
          {"rel_max_distance", config.rel_max_distance}};
}

std::string config_sha256(const ModelConfig& config) { return sha256_hex(config_json(config).dump()); }

}  // namespace st5

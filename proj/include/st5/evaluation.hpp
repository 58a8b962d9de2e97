#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "st5/embedder.hpp"
#include "st5/model.hpp"

namespace st5 {

struct STSExample {
  std::string sentence_a;
  std::string sentence_b;
  double score = 0.0;  // human similarity in [0, 5]
};

// TSV `sentence_a \t sentence_b \t score`; scores outside [0, 5] are rejected.
std::vector<STSExample> load_sts(const std::filesystem::path& path);
void write_sts(const std::filesystem::path& path, std::span<const STSExample> examples);

struct TransferSplit {
  std::vector<std::string> texts;
  std::vector<int> labels;
};

struct TransferDataset {
  TransferSplit train;
  TransferSplit test;
  std::vector<std::string> label_names;  // label id -> original label string
};

// TSV `label \t text`, plus a JSON split manifest {"train": [line indices],
// "test": [line indices]} with zero-based indices over non-blank lines.
// Label strings are mapped to ids in order of first appearance.
TransferDataset load_transfer(const std::filesystem::path& path, const std::filesystem::path& split_manifest);

// Average (fractional) ranks, 1-based; ties share the mean of their ranks.
std::vector<double> fractional_ranks(std::span<const double> values);

double pearson(std::span<const double> x, std::span<const double> y);

// Pearson correlation of fractional ranks. Throws DegenerateInputError when
// either side is constant and DimensionError on length mismatch or n < 2.
double spearman(std::span<const double> x, std::span<const double> y);

// Similarity per example: dot of unit vectors when projected, explicit
// cosine of raw vectors otherwise.
std::vector<double> sts_similarities(const EncoderDecoderModel& model, std::span<const STSExample> dataset,
                                     ExtractionStrategy strategy, bool projected, std::size_t batch_size = 32);

// 100 x Spearman between model similarities and human scores, with every
// example pooled into one correlation.
double eval_sts(const EncoderDecoderModel& model, std::span<const STSExample> dataset, ExtractionStrategy strategy,
                bool projected, std::size_t batch_size = 32);

struct ProbeOptions {
  double l2_penalty = 1e-3;
  std::int64_t max_iterations = 20000;
  double gradient_tolerance = 1e-6;
};

// Multinomial logistic regression: weights [d x classes], bias [classes].
struct Probe {
  Matrix weights;
  Eigen::RowVectorXd bias;
  std::int64_t iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  std::vector<double> objective_trace;  // value after every accepted step, starting at the initial point

  std::vector<int> predict(const Matrix& features) const;
};

// Minimizes mean cross-entropy + (l2/2)(|W|^2 + |b|^2) by full-batch gradient
// descent with a Barzilai-Borwein trial step and Armijo backtracking, so the
// objective never increases. Warns when max_iterations is hit.
Probe train_probe(const Matrix& features, std::span<const int> labels, const ProbeOptions& options = {});

double probe_objective(const Matrix& features, std::span<const int> labels, const Matrix& weights,
                       const Eigen::RowVectorXd& bias, double l2_penalty);

double accuracy(std::span<const int> predicted, std::span<const int> labels);

// Embed train split, fit probe, embed test split; returns accuracy x 100.
double eval_transfer(const EncoderDecoderModel& model, const TransferDataset& dataset, ExtractionStrategy strategy,
                     bool projected, const ProbeOptions& options = {});

// Mean over rows of |a_i - b_i|^alpha.
double alignment_loss(const Matrix& a, const Matrix& b, double alpha = 2.0);

enum class UniformityExponent { Squared, Linear };

// log of the mean over unordered pairs i < j of exp(-t * |e_i - e_j|^2)
// (Squared) or exp(-t * |e_i - e_j|) (Linear), via log-sum-exp.
double uniformity_loss(const Matrix& embeddings, double t = 2.0,
                       UniformityExponent exponent = UniformityExponent::Squared);

struct Diagnosis {
  std::optional<double> alignment;  // absent when no pair clears the threshold
  double uniformity = 0.0;
  double spearman100 = 0.0;
  std::size_t positive_pairs = 0;
  std::size_t sentences = 0;
};

struct DiagnoseOptions {
  double threshold = 4.0;
  double alpha = 2.0;
  double t = 2.0;
  UniformityExponent exponent = UniformityExponent::Squared;
};

// Alignment over pairs scoring above the threshold, uniformity over every
// distinct sentence (exact string match), and the STS Spearman x 100.
Diagnosis diagnose(const EncoderDecoderModel& model, std::span<const STSExample> dataset,
                   ExtractionStrategy strategy, bool projected, const DiagnoseOptions& options = {});

struct DatasetScore {
  std::string name;
  std::string kind;  // "sts" or "transfer"
  std::string sha256;
  double value = 0.0;  // Spearman x 100 or accuracy x 100
};

struct EvalReport {
  std::string strategy;
  bool projected = true;
  std::string checkpoint_sha256;
  std::string config_sha256;
  std::vector<DatasetScore> scores;
  std::optional<double> alignment;
  std::optional<double> uniformity;

  // {"schema": "st5-eval-report v1", "summary": {...2 decimals...},
  //  "machine": {...full precision...}}
  nlohmann::ordered_json to_json() const;
  std::string summary_text() const;
};

// Canonical JSON of the architecture, and its SHA-256.
nlohmann::ordered_json config_json(const ModelConfig& config);
std::string config_sha256(const ModelConfig& config);

}  // namespace st5

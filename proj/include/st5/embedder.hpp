#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "st5/autodiff.hpp"
#include "st5/model.hpp"

namespace st5 {

enum class ExtractionStrategy { EncoderFirst, EncoderMean, EncoderDecoderFirst };

// "enc_first", "enc_mean", "encdec_first".
std::string to_string(ExtractionStrategy strategy);
// Throws ConfigError listing the valid names.
ExtractionStrategy parse_strategy(const std::string& name);

struct SentenceEmbedding {
  Eigen::RowVectorXd vector;
  ExtractionStrategy strategy = ExtractionStrategy::EncoderMean;
  bool projected = true;
};

// One embedding per row.
struct EmbeddingMatrix {
  Matrix rows;
  ExtractionStrategy strategy = ExtractionStrategy::EncoderMean;
  bool projected = true;

  Index size() const { return rows.rows(); }
  Index dim() const { return rows.cols(); }
  SentenceEmbedding row(Index i) const { return {rows.row(i), strategy, projected}; }
};

// Sentence vectors straight from the backbone, [batch x d_model]:
// encoder row 0, masked mean of encoder rows, or the first decoder output.
ad::Var extract_raw(const BoundModel& model, const TokenBatch& batch, ExtractionStrategy strategy);
Tensor extract_raw(const EncoderDecoderModel& model, const TokenBatch& batch, ExtractionStrategy strategy);

// raw [batch x d_model] times projection [d_model x embed_dim], rows scaled
// to unit L2 norm.
ad::Var project_and_normalize(const ad::Var& raw, const ad::Var& projection);
EmbeddingMatrix project_and_normalize(const Tensor& raw, const Tensor& projection, ExtractionStrategy strategy);

// Dot product of two projected embeddings (their cosine similarity).
double similarity(const SentenceEmbedding& a, const SentenceEmbedding& b);

// Cosine similarity of arbitrary nonzero vectors.
double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b);

// Embeds one batch of texts: projected unit vectors, or raw d_model vectors.
EmbeddingMatrix embed_texts(const EncoderDecoderModel& model, std::span<const std::string> texts,
                            ExtractionStrategy strategy, bool projected);

struct ManifestEntry {
  std::string id;
  std::string text_sha256;
};

struct CorpusEmbedding {
  EmbeddingMatrix embeddings;
  std::vector<ManifestEntry> manifest;
};

// Row i embeds texts[i] with id std::to_string(i). Results do not depend on
// batch_size; batches may run on `threads` workers (0 = configured_threads()).
CorpusEmbedding embed_corpus(const EncoderDecoderModel& model, std::span<const std::string> texts,
                             ExtractionStrategy strategy, bool projected, std::size_t batch_size,
                             std::size_t threads = 0);

// Text dump: header `st5-embed v1 dim=<d> strategy=<name> projected=<bool>`,
// then `<id>\t<base64 of little-endian f64 vector>` per line.
void write_embedding_dump(const std::filesystem::path& path, const CorpusEmbedding& corpus);
CorpusEmbedding read_embedding_dump(const std::filesystem::path& path);

// JSON object {"schema": "st5-embed-manifest v1", "entries": {id: sha256}}.
void write_embedding_manifest(const std::filesystem::path& path, const CorpusEmbedding& corpus);

}  // namespace st5

#include "st5/embedder.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "st5/backbone.hpp"
#include "st5/hashing.hpp"
#include "st5/ops.hpp"
#include "st5/parallel.hpp"
#include "st5/tokenizer.hpp"

namespace st5 {

std::string to_string(ExtractionStrategy strategy) {
  switch (strategy) {
    case ExtractionStrategy::EncoderFirst: return "enc_first";
    case ExtractionStrategy::EncoderMean: return "enc_mean";
    case ExtractionStrategy::EncoderDecoderFirst: return "encdec_first";
  }
  return "enc_mean";
}

ExtractionStrategy parse_strategy(const std::string& name) {
  if (name == "enc_first") return ExtractionStrategy::EncoderFirst;
  if (name == "enc_mean") return ExtractionStrategy::EncoderMean;
  if (name == "encdec_first") return ExtractionStrategy::EncoderDecoderFirst;
  throw ConfigError("unknown strategy '" + name + "' (valid: enc_first, enc_mean, encdec_first)");
}

ad::Var extract_raw(const BoundModel& model, const TokenBatch& batch, ExtractionStrategy strategy) {
  const ad::Var encoded = encode(model, batch);
  const Index B = batch.batch(), L = batch.length();
  switch (strategy) {
    case ExtractionStrategy::EncoderFirst: {
      std::vector<Index> rows(static_cast<std::size_t>(B));
      for (Index b = 0; b < B; ++b) rows[static_cast<std::size_t>(b)] = b * L;
      return ad::select_rows(encoded, rows);
    }
    case ExtractionStrategy::EncoderMean:
      return ad::masked_mean_rows(encoded, batch.mask);
    case ExtractionStrategy::EncoderDecoderFirst:
      return decode_first(model, encoded, batch.mask);
  }
  throw ContractError("unhandled extraction strategy");
}

Tensor extract_raw(const EncoderDecoderModel& model, const TokenBatch& batch, ExtractionStrategy strategy) {
  ad::Tape tape(ad::Tape::Mode::Inference);
  BoundModel bound(tape, model, false);
  return extract_raw(bound, batch, strategy).value();
}

ad::Var project_and_normalize(const ad::Var& raw, const ad::Var& projection) {
  if (projection.value().rank() != 2 || raw.mat().cols() != projection.mat().rows()) {
    throw DimensionError("projection " + shape_string(projection.shape()) + " does not accept raw vectors " +
                         shape_string(raw.shape()));
  }
  return ad::l2_normalize_rows(ad::matmul(raw, projection));
}

EmbeddingMatrix project_and_normalize(const Tensor& raw, const Tensor& projection, ExtractionStrategy strategy) {
  if (projection.rank() != 2 || raw.mat().cols() != projection.dim(0)) {
    throw DimensionError("projection " + shape_string(projection.shape()) + " does not accept raw vectors " +
                         shape_string(raw.shape()));
  }
  return {l2_normalize_rows(Matrix(raw.mat() * projection.mat())), strategy, true};
}

double similarity(const SentenceEmbedding& a, const SentenceEmbedding& b) {
  if (!a.projected || !b.projected) throw ContractError("similarity needs projected (unit-norm) embeddings");
  if (a.vector.size() != b.vector.size()) {
    throw DimensionError("embedding dimensions differ: " + std::to_string(a.vector.size()) + " vs " +
                         std::to_string(b.vector.size()));
  }
  return a.vector.dot(b.vector);
}

double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  if (a.size() != b.size()) throw DimensionError("cosine of vectors with different dimensions");
  const double na = a.norm(), nb = b.norm();
  if (!(na > kNormEpsilon) || !(nb > kNormEpsilon)) throw DegenerateInputError("cosine of a zero vector");
  return a.dot(b) / (na * nb);
}

EmbeddingMatrix embed_texts(const EncoderDecoderModel& model, std::span<const std::string> texts,
                            ExtractionStrategy strategy, bool projected) {
  const TokenBatch batch = make_batch(texts, ByteVocab::for_config(model.config));
  const Tensor raw = extract_raw(model, batch, strategy);
  if (projected) return project_and_normalize(raw, model.projection(), strategy);
  return {raw.mat(), strategy, false};
}

CorpusEmbedding embed_corpus(const EncoderDecoderModel& model, std::span<const std::string> texts,
                             ExtractionStrategy strategy, bool projected, std::size_t batch_size,
                             std::size_t threads) {
  if (batch_size == 0) throw ParameterError("batch_size must be positive");
  const Index dim = projected ? model.config.embed_dim : model.config.d_model;
  CorpusEmbedding out;
  out.embeddings = {Matrix(static_cast<Index>(texts.size()), dim), strategy, projected};
  out.manifest.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) out.manifest.push_back({std::to_string(i), sha256_hex(texts[i])});

  const std::size_t n_batches = (texts.size() + batch_size - 1) / batch_size;
  parallel_for(n_batches, threads ? threads : configured_threads(), [&](std::size_t b) {
    const std::size_t begin = b * batch_size;
    const std::size_t count = std::min(batch_size, texts.size() - begin);
    const EmbeddingMatrix part = embed_texts(model, texts.subspan(begin, count), strategy, projected);
    out.embeddings.rows.middleRows(static_cast<Index>(begin), static_cast<Index>(count)) = part.rows;
  });
  return out;
}

namespace {

std::string encode_vector(const Eigen::RowVectorXd& v) {
  std::string bytes(static_cast<std::size_t>(v.size()) * sizeof(double), '\0');
  for (Index i = 0; i < v.size(); ++i) {
    char b[sizeof(double)];
    std::memcpy(b, &v(i), sizeof(double));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(double));
    std::memcpy(bytes.data() + static_cast<std::size_t>(i) * sizeof(double), b, sizeof(double));
  }
  return base64_encode(bytes);
}

Eigen::RowVectorXd decode_vector(const std::string& text, Index dim) {
  const std::string bytes = base64_decode(text);
  if (bytes.size() != static_cast<std::size_t>(dim) * sizeof(double)) {
    throw ContractError("embedding record has " + std::to_string(bytes.size()) + " bytes, expected " +
                        std::to_string(dim * static_cast<Index>(sizeof(double))));
  }
  Eigen::RowVectorXd v(dim);
  for (Index i = 0; i < dim; ++i) {
    char b[sizeof(double)];
    std::memcpy(b, bytes.data() + static_cast<std::size_t>(i) * sizeof(double), sizeof(double));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(double));
    std::memcpy(&v(i), b, sizeof(double));
  }
  return v;
}

}  // namespace

void write_embedding_dump(const std::filesystem::path& path, const CorpusEmbedding& corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const EmbeddingMatrix& e = corpus.embeddings;
  out << "st5-embed v1 dim=" << e.dim() << " strategy=" << to_string(e.strategy)
      << " projected=" << (e.projected ? "true" : "false") << '\n';
  for (Index i = 0; i < e.size(); ++i) {
    out << corpus.manifest.at(static_cast<std::size_t>(i)).id << '\t' << encode_vector(e.rows.row(i)) << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

CorpusEmbedding read_embedding_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string header;
  if (!std::getline(in, header)) throw ParseError(path.string(), 1, "missing header");
  std::istringstream hs(header);
  std::string magic, version, dim_field, strategy_field, projected_field;
  hs >> magic >> version >> dim_field >> strategy_field >> projected_field;
  if (magic != "st5-embed" || version != "v1" || dim_field.rfind("dim=", 0) != 0 ||
      strategy_field.rfind("strategy=", 0) != 0 || projected_field.rfind("projected=", 0) != 0) {
    throw ParseError(path.string(), 1, "bad header '" + header + "'");
  }
  const Index dim = std::stol(dim_field.substr(4));
  CorpusEmbedding corpus;
  corpus.embeddings.strategy = parse_strategy(strategy_field.substr(9));
  corpus.embeddings.projected = projected_field.substr(10) == "true";

  std::vector<Eigen::RowVectorXd> rows;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(path.string(), line_no, "missing tab separator");
    try {
      rows.push_back(decode_vector(line.substr(tab + 1), dim));
    } catch (const ContractError& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
    corpus.manifest.push_back({line.substr(0, tab), ""});
  }
  corpus.embeddings.rows.resize(static_cast<Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) corpus.embeddings.rows.row(static_cast<Index>(i)) = rows[i];
  return corpus;
}

void write_embedding_manifest(const std::filesystem::path& path, const CorpusEmbedding& corpus) {
  nlohmann::ordered_json entries = nlohmann::ordered_json::object();
  for (const auto& m : corpus.manifest) entries[m.id] = m.text_sha256;
  nlohmann::ordered_json doc = {{"schema", "st5-embed-manifest v1"}, {"entries", entries}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << doc.dump(2) << '\n';
}

}  // namespace st5

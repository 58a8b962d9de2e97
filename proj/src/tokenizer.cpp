#include "st5/tokenizer.hpp"

#include <algorithm>

namespace st5 {

TokenizedText tokenize(std::string_view text, const ByteVocab& vocab) {
  TokenizedText out;
  const std::size_t limit = static_cast<std::size_t>(std::max<std::int64_t>(vocab.max_seq_len, 1)) - 1;
  out.truncated = text.size() > limit;
  const std::size_t n = std::min(text.size(), limit);
  out.ids.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = static_cast<std::int32_t>(static_cast<unsigned char>(text[i])) + ByteVocab::kByteOffset;
    out.ids.push_back(id < vocab.vocab_size ? id : ByteVocab::kUnk);
  }
  out.ids.push_back(ByteVocab::kEos);
  return out;
}

TokenBatch make_batch(std::span<const TokenizedText> rows) {
  std::size_t len = 0;
  for (const auto& r : rows) len = std::max(len, r.ids.size());
  const auto n = static_cast<Index>(rows.size());
  TokenBatch batch{IntMatrix::Constant(n, static_cast<Index>(len), ByteVocab::kPad),
                   IntMatrix::Zero(n, static_cast<Index>(len))};
  for (Index b = 0; b < n; ++b) {
    const auto& ids = rows[static_cast<std::size_t>(b)].ids;
    for (std::size_t l = 0; l < ids.size(); ++l) {
      batch.ids(b, static_cast<Index>(l)) = ids[l];
      batch.mask(b, static_cast<Index>(l)) = 1;
    }
  }
  return batch;
}

TokenBatch make_batch(std::span<const std::string> texts, const ByteVocab& vocab) {
  std::vector<TokenizedText> rows;
  rows.reserve(texts.size());
  for (const auto& t : texts) rows.push_back(tokenize(t, vocab));
  return make_batch(rows);
}

}  // namespace st5

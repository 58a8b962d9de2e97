#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "st5/model.hpp"

namespace st5 {

// Byte-level vocabulary: ids 0..2 are reserved, byte b maps to 3 + b.
struct ByteVocab {
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kEos = 1;
  static constexpr std::int32_t kUnk = 2;
  static constexpr std::int32_t kByteOffset = 3;
  static constexpr std::int64_t kFullSize = 256 + kByteOffset;

  std::int64_t vocab_size = kFullSize;
  std::int64_t max_seq_len = 256;

  static ByteVocab for_config(const ModelConfig& c) { return {c.vocab_size, c.max_seq_len}; }
};

struct TokenizedText {
  std::vector<std::int32_t> ids;  // always ends with EOS
  bool truncated = false;
};

// Total: every string maps to at least [EOS]. Bytes whose id falls outside
// the vocabulary become UNK. Long inputs keep their first max_seq_len - 1
// bytes and set `truncated`.
TokenizedText tokenize(std::string_view text, const ByteVocab& vocab);

// Right-padded batch of tokenized texts.
TokenBatch make_batch(std::span<const std::string> texts, const ByteVocab& vocab);
TokenBatch make_batch(std::span<const TokenizedText> rows);

}  // namespace st5

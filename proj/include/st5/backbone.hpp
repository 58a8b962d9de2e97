#pragma once

#include <cstdint>

#include "st5/autodiff.hpp"
#include "st5/model.hpp"

namespace st5 {

// Decoder start symbol fed to the first decoder step (the PAD id).
inline constexpr std::int32_t kDecoderStartId = 0;

// T5 bucketing of the signed distance (key - query): exact buckets for
// small distances, logarithmic up to max_distance, then saturated.
// Bidirectional maps use half of the buckets for positive distances.
std::int32_t relative_position_bucket(Index relative_position, bool bidirectional, Index num_buckets,
                                      Index max_distance);

IntMatrix relative_position_buckets(Index q_len, Index k_len, bool bidirectional, Index num_buckets,
                                    Index max_distance);

// Per-token encoder outputs, shape [batch x len x d_model]. Attention never
// looks at masked keys, so unmasked outputs do not depend on padding.
ad::Var encode(const BoundModel& model, const TokenBatch& batch);

// Output of the first decoder step (after the final decoder norm), shape
// [batch x d_model]. `encoded` must come from encode() with `enc_mask`.
ad::Var decode_first(const BoundModel& model, const ad::Var& encoded, const IntMatrix& enc_mask,
                     std::int32_t start_id = kDecoderStartId);

// Non-recording conveniences.
Tensor encode(const EncoderDecoderModel& model, const TokenBatch& batch);
Tensor decode_first(const EncoderDecoderModel& model, const TokenBatch& batch,
                    std::int32_t start_id = kDecoderStartId);

}  // namespace st5

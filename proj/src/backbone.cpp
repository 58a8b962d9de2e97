#include "st5/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace st5 {

std::int32_t relative_position_bucket(Index relative_position, bool bidirectional, Index num_buckets,
                                      Index max_distance) {
  Index bucket = 0;
  Index n = relative_position;
  if (bidirectional) {
    num_buckets /= 2;
    if (n > 0) bucket += num_buckets;
    n = std::abs(n);
  } else {
    n = -std::min<Index>(n, 0);
  }
  const Index max_exact = num_buckets / 2;
  if (n < max_exact) return static_cast<std::int32_t>(bucket + n);
  const double scaled = std::log(static_cast<double>(n) / static_cast<double>(max_exact)) /
                        std::log(static_cast<double>(max_distance) / static_cast<double>(max_exact)) *
                        static_cast<double>(num_buckets - max_exact);
  const Index large = std::min<Index>(max_exact + static_cast<Index>(scaled), num_buckets - 1);
  return static_cast<std::int32_t>(bucket + large);
}

IntMatrix relative_position_buckets(Index q_len, Index k_len, bool bidirectional, Index num_buckets,
                                    Index max_distance) {
  IntMatrix out(q_len, k_len);
  for (Index i = 0; i < q_len; ++i) {
    for (Index j = 0; j < k_len; ++j) {
      out(i, j) = relative_position_bucket(j - i, bidirectional, num_buckets, max_distance);
    }
  }
  return out;
}

namespace {

ad::Var feed_forward(const BoundModel& m, const ad::Var& x, const std::string& prefix) {
  ad::Var h = ad::rms_norm(x, m[prefix + "ln_ff"]);
  h = ad::relu(ad::matmul(h, m[prefix + "ff.wi"]));
  return ad::add(x, ad::matmul(h, m[prefix + "ff.wo"]));
}

struct AttentionWeights {
  const ad::Var& q;
  const ad::Var& k;
  const ad::Var& v;
  const ad::Var& o;
};

AttentionWeights weights(const BoundModel& m, const std::string& prefix) {
  return {m[prefix + "q"], m[prefix + "k"], m[prefix + "v"], m[prefix + "o"]};
}

double attention_scale(const ModelConfig& c) {
  return 1.0 / std::sqrt(static_cast<double>(c.d_model / c.n_heads));
}

}  // namespace

ad::Var encode(const BoundModel& m, const TokenBatch& batch) {
  const ModelConfig& c = m.config();
  const Index B = batch.batch(), L = batch.length();
  if (L > c.max_seq_len) {
    throw LengthError("sequence length " + std::to_string(L) + " exceeds max_seq_len " +
                      std::to_string(c.max_seq_len));
  }
  batch.validate(c.vocab_size);

  const IntMatrix buckets = relative_position_buckets(L, L, true, c.rel_buckets, c.rel_max_distance);
  ad::AttentionLayout layout;
  layout.batch = B;
  layout.q_len = L;
  layout.k_len = L;
  layout.heads = c.n_heads;
  layout.scale = attention_scale(c);
  layout.key_mask = &batch.mask;
  layout.buckets = &buckets;

  ad::Var x = ad::gather_rows(m["shared.embed"], batch.ids);
  const ad::Var& rel_bias = m["enc.rel_bias"];
  for (std::int64_t l = 0; l < c.n_layers_enc; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    const AttentionWeights w = weights(m, p + "attn.");
    const ad::Var h = ad::rms_norm(x, m[p + "ln_attn"]);
    const ad::Var a = ad::attention(ad::matmul(h, w.q), ad::matmul(h, w.k), ad::matmul(h, w.v), layout, rel_bias);
    x = ad::add(x, ad::matmul(a, w.o));
    x = feed_forward(m, x, p);
  }
  x = ad::rms_norm(x, m["enc.final_ln"]);
  return ad::reshape(x, Shape{B, L, c.d_model});
}

ad::Var decode_first(const BoundModel& m, const ad::Var& encoded, const IntMatrix& enc_mask,
                     std::int32_t start_id) {
  const ModelConfig& c = m.config();
  const Shape& es = encoded.shape();
  if (es.size() != 3 || es[0] != enc_mask.rows() || es[1] != enc_mask.cols() || es[2] != c.d_model) {
    throw ContractError("decode_first: encoder output " + shape_string(es) + " does not match mask " +
                        std::to_string(enc_mask.rows()) + "x" + std::to_string(enc_mask.cols()));
  }
  const Index B = es[0], L = es[1];
  const ad::Var memory = ad::reshape(encoded, Shape{B * L, c.d_model});

  const IntMatrix self_buckets = relative_position_buckets(1, 1, false, c.rel_buckets, c.rel_max_distance);
  ad::AttentionLayout self_layout;
  self_layout.batch = B;
  self_layout.q_len = 1;
  self_layout.k_len = 1;
  self_layout.heads = c.n_heads;
  self_layout.scale = attention_scale(c);
  self_layout.causal = true;
  self_layout.buckets = &self_buckets;

  ad::AttentionLayout cross_layout = self_layout;
  cross_layout.k_len = L;
  cross_layout.causal = false;
  cross_layout.key_mask = &enc_mask;
  cross_layout.buckets = nullptr;

  ad::Var y = ad::gather_rows(m["shared.embed"], IntMatrix::Constant(B, 1, start_id));
  const ad::Var& rel_bias = m["dec.rel_bias"];
  for (std::int64_t l = 0; l < c.n_layers_dec; ++l) {
    const std::string p = "dec." + std::to_string(l) + ".";
    {
      const AttentionWeights w = weights(m, p + "self.");
      const ad::Var h = ad::rms_norm(y, m[p + "ln_self"]);
      const ad::Var a =
          ad::attention(ad::matmul(h, w.q), ad::matmul(h, w.k), ad::matmul(h, w.v), self_layout, rel_bias);
      y = ad::add(y, ad::matmul(a, w.o));
    }
    {
      const AttentionWeights w = weights(m, p + "cross.");
      const ad::Var h = ad::rms_norm(y, m[p + "ln_cross"]);
      const ad::Var a = ad::attention(ad::matmul(h, w.q), ad::matmul(memory, w.k), ad::matmul(memory, w.v),
                                      cross_layout);
      y = ad::add(y, ad::matmul(a, w.o));
    }
    y = feed_forward(m, y, p);
  }
  return ad::rms_norm(y, m["dec.final_ln"]);
}

Tensor encode(const EncoderDecoderModel& model, const TokenBatch& batch) {
  ad::Tape tape(ad::Tape::Mode::Inference);
  BoundModel bound(tape, model, false);
  return encode(bound, batch).value();
}

Tensor decode_first(const EncoderDecoderModel& model, const TokenBatch& batch, std::int32_t start_id) {
  ad::Tape tape(ad::Tape::Mode::Inference);
  BoundModel bound(tape, model, false);
  return decode_first(bound, encode(bound, batch), batch.mask, start_id).value();
}

}  // namespace st5

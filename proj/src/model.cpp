#include "st5/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

namespace st5 {

std::string to_string(SizePreset preset) {
  switch (preset) {
    case SizePreset::Tiny: return "tiny";
    case SizePreset::Small: return "small";
    case SizePreset::BaseToy: return "base-toy";
  }
  return "tiny";
}

SizePreset parse_size_preset(const std::string& name) {
  if (name == "tiny") return SizePreset::Tiny;
  if (name == "small") return SizePreset::Small;
  if (name == "base-toy") return SizePreset::BaseToy;
  throw ConfigError("unknown size preset '" + name + "' (expected tiny, small, base-toy)");
}

ModelConfig ModelConfig::preset(SizePreset preset) {
  ModelConfig c;
  c.size_preset = preset;
  switch (preset) {
    case SizePreset::Tiny:
      c.d_model = 32, c.n_heads = 4, c.d_ff = 64, c.n_layers_enc = 2, c.n_layers_dec = 2;
      break;
    case SizePreset::Small:
      c.d_model = 64, c.n_heads = 4, c.d_ff = 128, c.n_layers_enc = 3, c.n_layers_dec = 3;
      break;
    case SizePreset::BaseToy:
      c.d_model = 128, c.n_heads = 8, c.d_ff = 256, c.n_layers_enc = 4, c.n_layers_dec = 4;
      break;
  }
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](std::int64_t v, const char* what) {
    if (v <= 0) throw ConfigError(std::string(what) + " must be positive, got " + std::to_string(v));
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(n_layers_enc, "n_layers_enc");
  positive(n_layers_dec, "n_layers_dec");
  positive(max_seq_len, "max_seq_len");
  positive(embed_dim, "embed_dim");
  positive(rel_max_distance, "rel_max_distance");
  if (vocab_size < 3) throw ConfigError("vocab_size must cover the reserved PAD/EOS/UNK ids");
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (rel_buckets < 4 || rel_buckets % 2 != 0) throw ConfigError("rel_buckets must be an even number >= 4");
}

std::vector<ParameterSpec> parameter_specs(const ModelConfig& c) {
  const Index d = c.d_model, ff = c.d_ff;
  std::vector<ParameterSpec> specs;
  specs.push_back({"shared.embed", {c.vocab_size, d}});
  specs.push_back({"enc.rel_bias", {c.rel_buckets, c.n_heads}});
  for (std::int64_t l = 0; l < c.n_layers_enc; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    specs.push_back({p + "ln_attn", {d}});
    for (const char* w : {"attn.q", "attn.k", "attn.v", "attn.o"}) specs.push_back({p + w, {d, d}});
    specs.push_back({p + "ln_ff", {d}});
    specs.push_back({p + "ff.wi", {d, ff}});
    specs.push_back({p + "ff.wo", {ff, d}});
  }
  specs.push_back({"enc.final_ln", {d}});
  specs.push_back({"dec.rel_bias", {c.rel_buckets, c.n_heads}});
  for (std::int64_t l = 0; l < c.n_layers_dec; ++l) {
    const std::string p = "dec." + std::to_string(l) + ".";
    specs.push_back({p + "ln_self", {d}});
    for (const char* w : {"self.q", "self.k", "self.v", "self.o"}) specs.push_back({p + w, {d, d}});
    specs.push_back({p + "ln_cross", {d}});
    for (const char* w : {"cross.q", "cross.k", "cross.v", "cross.o"}) specs.push_back({p + w, {d, d}});
    specs.push_back({p + "ln_ff", {d}});
    specs.push_back({p + "ff.wi", {d, ff}});
    specs.push_back({p + "ff.wo", {ff, d}});
  }
  specs.push_back({"dec.final_ln", {d}});
  specs.push_back({"proj", {d, c.embed_dim}});
  return specs;
}

std::int64_t count_params(const ModelConfig& config) {
  std::int64_t total = 0;
  for (const auto& s : parameter_specs(config)) total += shape_size(s.shape);
  return total;
}

std::vector<Index> TokenBatch::lengths() const {
  std::vector<Index> out(static_cast<std::size_t>(batch()));
  for (Index b = 0; b < batch(); ++b) out[static_cast<std::size_t>(b)] = (mask.row(b).array() != 0).count();
  return out;
}

void TokenBatch::validate(std::int64_t vocab_size) const {
  if (ids.rows() != mask.rows() || ids.cols() != mask.cols()) {
    throw ContractError("token ids and mask have different shapes");
  }
  for (Index b = 0; b < batch(); ++b) {
    bool seen_pad = false;
    if (length() == 0 || mask(b, 0) == 0) throw ContractError("row " + std::to_string(b) + " has no tokens");
    for (Index l = 0; l < length(); ++l) {
      const auto m = mask(b, l);
      if (m != 0 && m != 1) throw ContractError("mask entries must be 0 or 1");
      if (m == 0) seen_pad = true;
      else if (seen_pad) throw ContractError("mask row " + std::to_string(b) + " is not right-padded");
      if (ids(b, l) < 0 || ids(b, l) >= vocab_size) {
        throw ContractError("token id " + std::to_string(ids(b, l)) + " outside vocabulary");
      }
    }
  }
}

TokenBatch concat_batches(std::span<const TokenBatch* const> parts) {
  Index rows = 0, len = 0;
  for (const TokenBatch* p : parts) {
    rows += p->batch();
    len = std::max(len, p->length());
  }
  TokenBatch out{IntMatrix::Zero(rows, len), IntMatrix::Zero(rows, len)};
  Index r = 0;
  for (const TokenBatch* p : parts) {
    out.ids.block(r, 0, p->batch(), p->length()) = p->ids;
    out.mask.block(r, 0, p->batch(), p->length()) = p->mask;
    r += p->batch();
  }
  return out;
}

void ParameterStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

std::size_t ParameterStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
  return it->second;
}

Tensor& ParameterStore::at(const std::string& name) { return tensors_[index_of(name)]; }
const Tensor& ParameterStore::at(const std::string& name) const { return tensors_[index_of(name)]; }

EncoderDecoderModel init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderDecoderModel model{config, {}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto ends_with = [](const std::string& s, const char* suffix) {
    const std::size_t n = std::strlen(suffix);
    return s.size() >= n && s.compare(s.size() - n, n, suffix) == 0;
  };
  for (const auto& spec : parameter_specs(config)) {
    Tensor t(spec.shape);
    if (spec.shape.size() == 1) {
      t.mat().setOnes();  // normalization gains
    } else {
      double stddev = 1.0 / std::sqrt(static_cast<double>(spec.shape[0]));
      if (spec.name == "shared.embed") stddev = 1.0;
      else if (ends_with(spec.name, "rel_bias")) stddev = 0.1;
      for (double& x : t.flat()) x = stddev * normal(rng);
    }
    model.params.add(spec.name, std::move(t));
  }
  return model;
}

std::uint64_t parameter_checksum(const ParameterStore& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    mix(params.name(i).data(), params.name(i).size());
    const auto flat = params[i].flat();
    mix(flat.data(), flat.size_bytes());
  }
  return h;
}

BoundModel::BoundModel(ad::Tape& tape, const EncoderDecoderModel& model, bool requires_grad)
    : tape_(&tape), config_(&model.config), params_(&model.params) {
  vars_.reserve(model.params.size());
  for (const Tensor& t : model.params.tensors()) {
    vars_.push_back(requires_grad ? tape.parameter(t) : tape.constant(t));
  }
}

}  // namespace st5

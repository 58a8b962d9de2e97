#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "st5/autodiff.hpp"
#include "st5/tensor.hpp"

namespace st5 {

enum class SizePreset { Tiny, Small, BaseToy };

std::string to_string(SizePreset preset);
SizePreset parse_size_preset(const std::string& name);

// Architecture hyperparameters of the T5-style backbone plus the sentence
// projection head.
struct ModelConfig {
  std::int64_t vocab_size = 259;
  std::int64_t d_model = 32;
  std::int64_t n_heads = 4;
  std::int64_t d_ff = 64;
  std::int64_t n_layers_enc = 2;
  std::int64_t n_layers_dec = 2;
  std::int64_t max_seq_len = 256;
  std::int64_t embed_dim = 64;
  std::int64_t rel_buckets = 32;
  std::int64_t rel_max_distance = 128;
  SizePreset size_preset = SizePreset::Tiny;

  static ModelConfig preset(SizePreset preset);

  // Throws ConfigError on the first violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParameterSpec {
  std::string name;
  Shape shape;
};

// Every parameter of the model, in canonical (serialization) order.
std::vector<ParameterSpec> parameter_specs(const ModelConfig& config);

// Sum of the element counts of parameter_specs(config).
std::int64_t count_params(const ModelConfig& config);

// Right-padded token ids and their {0,1} mask, both batch x len.
struct TokenBatch {
  IntMatrix ids;
  IntMatrix mask;

  Index batch() const { return ids.rows(); }
  Index length() const { return ids.cols(); }
  std::vector<Index> lengths() const;

  // Throws ContractError unless ids are in range and every mask row is a
  // prefix of ones with at least one unmasked token.
  void validate(std::int64_t vocab_size) const;
};

// Concatenates batches along the batch axis, padding to the longest length.
TokenBatch concat_batches(std::span<const TokenBatch* const> parts);

// Ordered named tensors.
class ParameterStore {
 public:
  void add(std::string name, Tensor value);

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor& operator[](std::size_t i) { return tensors_.at(i); }
  const Tensor& operator[](std::size_t i) const { return tensors_.at(i); }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<std::string>& names() const { return names_; }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct EncoderDecoderModel {
  ModelConfig config;
  ParameterStore params;

  const Tensor& projection() const { return params.at("proj"); }
};

EncoderDecoderModel init_model(const ModelConfig& config, std::uint64_t seed);

// Order-sensitive 64-bit FNV-1a digest over every parameter's bytes.
std::uint64_t parameter_checksum(const ParameterStore& params);

// Leaf Vars for every model parameter on a tape, addressable by name.
class BoundModel {
 public:
  BoundModel(ad::Tape& tape, const EncoderDecoderModel& model, bool requires_grad);

  const ModelConfig& config() const { return *config_; }
  const ad::Var& operator[](const std::string& name) const { return vars_.at(params_->index_of(name)); }
  const std::vector<ad::Var>& vars() const { return vars_; }
  ad::Tape& tape() const { return *tape_; }

 private:
  ad::Tape* tape_;
  const ModelConfig* config_;
  const ParameterStore* params_;
  std::vector<ad::Var> vars_;
};

}  // namespace st5

#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "st5/model.hpp"

namespace st5 {

enum class OptimizerKind { Adafactor, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adafactor;
  // Adafactor: beta2_t = 1 - t^(-decay_exponent); updates are rescaled so
  // their RMS is at most clip_threshold.
  double decay_exponent = 0.8;
  double epsilon1 = 1e-30;
  double clip_threshold = 1.0;
  // Adam fallback.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
};

// Accumulators keyed by "<param>.row" / "<param>.col" (factored, rank-2
// parameters), "<param>.v" (full second moment) and "<param>.m" (Adam
// first moment). `step` counts updates applied so far.
struct OptimizerState {
  OptimizerConfig config;
  std::int64_t step = 0;
  ParameterStore slots;

  friend bool operator==(const OptimizerState& a, const OptimizerState& b) {
    return a.config.kind == b.config.kind && a.step == b.step && a.slots == b.slots;
  }
};

// True for parameters whose second moment Adafactor stores factored.
bool is_factored(const Shape& shape);

OptimizerState make_optimizer_state(const OptimizerConfig& config, const ParameterStore& params);

// Applies one update with learning rate `lr`. Throws NumericError naming the
// first non-finite gradient tensor before touching any parameter.
void optimizer_step(ParameterStore& params, OptimizerState& state, std::span<const Tensor> grads, double lr);

// Rescales grads in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_norm(std::span<Tensor> grads, double max_norm);

}  // namespace st5

#pragma once

#include <cstdint>

#include "st5/model.hpp"
#include "st5/optimizer.hpp"

namespace st5 {

// Everything needed to continue a training stage bit-exactly. Batch order is
// a pure function of (seed, step), so no other RNG state is kept.
struct TrainState {
  EncoderDecoderModel model;
  OptimizerState optimizer;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
};

TrainState make_train_state(const ModelConfig& config, std::uint64_t init_seed,
                            const OptimizerConfig& optimizer = {});

}  // namespace st5

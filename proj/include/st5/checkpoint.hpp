#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "st5/train_state.hpp"

namespace st5 {

inline constexpr char kCheckpointMagic[4] = {'S', 'T', '5', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Byte layout (all integers and floats little-endian):
//
//   magic        4 bytes  "ST5F"
//   version      u32      = 1
//   config       str preset, then i64 x 10: vocab_size d_model n_heads d_ff
//                n_layers_enc n_layers_dec max_seq_len embed_dim rel_buckets
//                rel_max_distance
//   tensors      u32 count, then per tensor: str name, u32 rank,
//                u64 x rank dims, f64 x prod(dims) data
//   optimizer    str kind, f64 x 6 (decay_exponent epsilon1 clip_threshold
//                beta1 beta2 adam_epsilon), i64 step, then a tensor table of
//                slots in the same encoding as above
//   train step   i64
//   seed         u64
//
// where `str` is a u32 byte length followed by the bytes.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
void save_checkpoint(const EncoderDecoderModel& model, const OptimizerState& optimizer, std::int64_t step,
                     const std::filesystem::path& path);

// Throws CheckpointError with kind NotACheckpoint (bad magic), VersionMismatch,
// Truncated, or ShapeMismatch (tensor table disagrees with the header config,
// or with `expected` when given; the message names the first bad tensor).
TrainState load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace st5

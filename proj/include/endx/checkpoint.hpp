#pragma once

#include <cstdint>
#include <string>

#include "endx/model.hpp"
#include "endx/params.hpp"

namespace endx {

/// A trained model snapshot: configuration, a fingerprint of the vocabulary
/// it was trained with, the global step count, and every parameter tensor.
/// Optimizer moments are deliberately not persisted — a checkpoint is a
/// model, not a training session.
struct Checkpoint {
    ModelConfig config;
    std::uint64_t vocab_hash = 0;
    std::uint64_t train_steps = 0;
    ParameterStore<float> params;
};

/// Binary layout (all integers little-endian regardless of host):
///   magic "ENDX" | u32 version | u64 header length | UTF-8 JSON header
///   then per parameter, in name order:
///   u32 name length | name bytes | u32 rank | rank × u64 extents |
///   row-major little-endian f32 values.
/// The JSON header carries the model config, vocab hash, step count, and
/// the parameter count. Saving the result of a load reproduces the input
/// byte for byte.
void save_checkpoint(const ParameterStore<float>& params,
                     const ModelConfig& config, std::uint64_t vocab_hash,
                     std::uint64_t train_steps, const std::string& path);

/// Verifies magic and version, then checks the tensor set against what
/// `register_parameters` would create for the stored config: a missing,
/// extra, or misshapen parameter is an error, never a silent default.
Checkpoint load_checkpoint(const std::string& path);

/// Fingerprint of the checkpoint file bytes (answer-index cache keying).
std::uint64_t checkpoint_file_hash(const std::string& path);

}  // namespace endx

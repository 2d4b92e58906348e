#pragma once

#include <filesystem>
#include <optional>

#include "brainseg/net_config.hpp"
#include "brainseg/optimizer.hpp"

namespace brainseg::nn {

/// Binary layout, little-endian:
///   "NNL1" | u32 record count | records
///   record: u32 name length | name bytes | u8 dtype (1 = f32) | u32 rank | u64 dims[rank] | f32 data
/// Optimizer moments are stored as "adam/m/<name>" and "adam/v/<name>", the
/// step counter as the rank-1 record "adam/step".
struct Checkpoint {
  NetParams<float> params;
  std::optional<AdamState> state;
};

void save_checkpoint(const NetParams<float> &params, const AdamState *state, const std::filesystem::path &path);
// Throws BadMagic, CorruptRecord, IoError.
Checkpoint load_checkpoint(const std::filesystem::path &path);

} // namespace brainseg::nn

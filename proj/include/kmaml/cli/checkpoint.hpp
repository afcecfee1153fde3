#pragma once

// KMCK checkpoint files.
//
// Layout (little-endian):
//   "KMCK" | u32 version | u32 len + strategy tag | u32 len + config text |
//   u64 epoch | u64 adam step | u32 tensor count |
//   per tensor: u32 len + name | u32 rank | u32 dims[rank] | f32 data
//
// Tensor names are the flattened parameter names ("theta/...", "omega/...",
// "ce/...", "scale/...") plus "adam_m/<name>" and "adam_v/<name>".

#include <cstdint>
#include <filesystem>
#include <string>

#include "kmaml/model/parameters.hpp"

namespace kmaml {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string strategy;
  std::string config_text;
  std::uint64_t epoch = 0;
  std::uint64_t adam_step = 0;
  ParameterSet<float> params;
  /// Adam moments keyed by flattened parameter name.
  TensorMap<float> adam_m;
  TensorMap<float> adam_v;

  bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on a bad magic, version mismatch, truncation or
/// trailing bytes.
Checkpoint decode_checkpoint(const std::string& bytes);

/// Writes to a temporary file first, so a failed write never clobbers an
/// existing checkpoint.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kmaml

#pragma once

// Probe checkpoint, little-endian:
//
//   "LPCKPT01" | u32 version | u64 task fingerprint | u32 slots | u32 L + 1 |
//   u32 layer_cap | u32 d | u32 p | u32 hidden | u32 C |
//   f32 tensors in ProbeParams::for_each_tensor order

#include <cstdint>
#include <filesystem>
#include <string>

#include "lprobe/annotations.hpp"
#include "lprobe/probe.hpp"

namespace lprobe {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const ProbeParams& params, const TaskSpec& task);
/// Throws BadMagic / VersionMismatch / Truncated / ShapeMismatch, and
/// InvalidArgument when the task fingerprint differs.
ProbeParams parse_checkpoint(const std::string& bytes, const TaskSpec& task);

void save_checkpoint(const std::filesystem::path& path, const ProbeParams& params,
                     const TaskSpec& task);
ProbeParams load_checkpoint(const std::filesystem::path& path, const TaskSpec& task);

/// Rounds every parameter through float32, the precision checkpoints store.
ProbeParams round_to_f32(const ProbeParams& params);

}  // namespace lprobe

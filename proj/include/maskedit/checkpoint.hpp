#pragma once

// Single-file checkpoint container.
//
//   bytes 0..7   magic "MSKEDCKP"
//   bytes 8..11  format version (uint32, little endian)
//   bytes 12..19 header length (uint64)
//   header       JSON: config snapshot, step, RNG state, optimizer step and
//                a tensor table {segment, name, shape, offset}
//   payload      little-endian float64 values in table order
//
// Segments: "correspondence", "transport", "guidance", "optimizer".

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "maskedit/training.hpp"

namespace maskedit {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
// FormatError for truncated/foreign/versioned-out files, ConsistencyError
// when segment shapes disagree with the stored configuration.
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace maskedit

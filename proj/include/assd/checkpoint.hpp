#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "assd/config.hpp"
#include "assd/detector.hpp"

namespace assd {

// Binary model file, little-endian throughout:
//   magic "ASSD" | u32 version | u32 length + config JSON | u32 tensor count
//   per tensor: u32 length + name | u32 rank | u32 dims... | f32 values
// Values are stored in single precision; the embedded config makes the file
// self-describing.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encodeCheckpoint(const PyramidConfig& config, const ModelParams& params);

struct LoadedModel {
    PyramidConfig config;
    ModelParams params;
};
LoadedModel decodeCheckpoint(const std::uint8_t* data, std::size_t len);

void saveCheckpoint(const std::string& path, const PyramidConfig& config, const ModelParams& params);
LoadedModel loadCheckpoint(const std::string& path);

} // namespace assd

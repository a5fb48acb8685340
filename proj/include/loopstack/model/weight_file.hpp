#pragma once

#include <filesystem>
#include <string>

#include "loopstack/model/weights.hpp"

namespace loopstack {

// Weight file layout (all integers little-endian):
//
//   "TFLT"                 4-byte magic
//   u32 version            = 1
//   u64 header_length
//   header                 UTF-8 JSON: {"config": {...}, "tensors":
//                          [{"name", "shape", "offset"}, ...]} with offsets in
//                          bytes from the start of the payload
//   payload                raw IEEE-754 float32 tensors, in directory order
//   u32 crc32              CRC-32 (zlib polynomial) of the payload bytes

inline constexpr char kWeightMagic[4] = {'T', 'F', 'L', 'T'};
inline constexpr std::uint32_t kWeightVersion = 1;

std::string serialize_model(const Model& model);
/// Throws FormatError; never returns a partially populated model.
Model deserialize_model(const std::string& bytes);

void save_weights(const Model& model, const std::filesystem::path& path);
Model load_weights(const std::filesystem::path& path);

}  // namespace loopstack

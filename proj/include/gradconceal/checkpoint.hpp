#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gradconceal/model.hpp"

namespace gc::nn {

// Layout (all integers little-endian):
//   "GCMB" | u16 version | u32 descriptor length | descriptor UTF-8 (ArchSpec text)
//   | f32 parameters in model order | u32 CRC-32 of the parameter payload
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(const Model& model);
/// Throws FormatError for structural problems and IntegrityError for a short
/// payload or checksum mismatch.
Model decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
/// Saves then reloads; the result has bit-identical parameters.
Model checkpoint_roundtrip(const Model& model, const std::filesystem::path& path);

}  // namespace gc::nn

#pragma once

// Checkpoint container:
//   "CQKD" | u32 version | u32 layer count | (u32 out, u32 in) per layer |
//   per layer: weights (row-major) then bias, as f64.
// All integers and floats are little-endian.

#include "cqkd/mlp.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cqkd {

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<unsigned char> encode_model(const ModelParams<double>& model);
/// Throws FormatError (bad magic, version or dimensions) or TruncationError.
ModelParams<double> decode_model(const std::vector<unsigned char>& bytes);

void save_model(const ModelParams<double>& model, const std::filesystem::path& path);
ModelParams<double> load_model(const std::filesystem::path& path);

}  // namespace cqkd

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dcfl/tensor.hpp"

namespace dcfl {

inline constexpr char kCheckpointMagic[8] = {'D', 'C', 'F', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers and reals little-endian):
//   magic[8] | u32 version | u32 layer count
//   per layer: u32 name length | name bytes | u32 rank | u64 dims[rank]
//   u64 value count | f64 values[count]
std::string encode_checkpoint(const ParameterVector& params);
ParameterVector decode_checkpoint(const std::string& bytes);

void save_checkpoint(const ParameterVector& params, const std::filesystem::path& path);
ParameterVector load_checkpoint(const std::filesystem::path& path);
// Throws IncompatibleCheckpointError when the stored manifest differs from `expected`.
ParameterVector load_checkpoint(const std::filesystem::path& path, const Manifest& expected);

}  // namespace dcfl

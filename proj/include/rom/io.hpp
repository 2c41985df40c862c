#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "rom/autodiff.hpp"

namespace rom::io {

namespace fs = std::filesystem;
using nlohmann::json;

/// Raised for missing, truncated, corrupted or mismatched files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint32_t crc32(std::span<const double> values);

/// Raw little-endian float64. Returns the crc32 of the bytes written.
std::uint32_t write_f64(const fs::path& path, std::span<const double> values);
/// Reads exactly `count` values and checks the crc32.
std::vector<double> read_f64(const fs::path& path, std::size_t count, std::uint32_t crc);

void write_json(const fs::path& path, const json& j);
json read_json(const fs::path& path);

/// Writes dir/manifest.json and dir/params.bin. `meta` is stored verbatim
/// under "meta".
void save_parameters(const fs::path& dir, const nn::ParameterRefs& params, const json& meta);
/// Fills params in place after checking names and shapes; returns "meta".
json load_parameters(const fs::path& dir, const nn::ParameterRefs& params);
/// Reads only the manifest's "meta" block.
json load_meta(const fs::path& dir);

}  // namespace rom::io

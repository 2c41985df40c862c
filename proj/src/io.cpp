#include "rom/io.hpp"

#include <bit>
#include <fstream>

#include <zlib.h>

namespace rom::io {

static_assert(std::endian::native == std::endian::little,
              "binary files are written in native little-endian order");

std::uint32_t crc32(std::span<const double> values) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* bytes = reinterpret_cast<const Bytef*>(values.data());
  std::size_t remaining = values.size_bytes();
  while (remaining > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(remaining, 1u << 30));
    crc = ::crc32(crc, bytes, chunk);
    bytes += chunk;
    remaining -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t write_f64(const fs::path& path, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw FormatError("write failed: " + path.string());
  return crc32(values);
}

std::vector<double> read_f64(const fs::path& path, std::size_t count, std::uint32_t crc) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const auto bytes = fs::file_size(path);
  if (bytes != count * sizeof(double)) {
    throw FormatError(path.string() + ": expected " + std::to_string(count * sizeof(double)) +
                      " bytes, found " + std::to_string(bytes));
  }
  std::vector<double> values(count);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw FormatError("read failed: " + path.string());
  if (crc32(values) != crc) throw FormatError(path.string() + ": checksum mismatch");
  return values;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_parameters(const fs::path& dir, const nn::ParameterRefs& params, const json& meta) {
  fs::create_directories(dir);
  std::vector<double> flat;
  json entries = json::array();
  for (const nn::Parameter* p : params) {
    entries.push_back({{"name", p->name},
                       {"shape", p->value.shape()},
                       {"offset", flat.size()},
                       {"count", p->value.size()}});
    flat.insert(flat.end(), p->value.storage().begin(), p->value.storage().end());
  }
  const std::uint32_t crc = write_f64(dir / "params.bin", flat);
  write_json(dir / "manifest.json", {{"format", "rom-params-v1"},
                                     {"dtype", "float64-le"},
                                     {"count", flat.size()},
                                     {"crc32", crc},
                                     {"parameters", entries},
                                     {"meta", meta}});
}

json load_meta(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  if (manifest.value("format", "") != "rom-params-v1") {
    throw FormatError(dir.string() + ": not a parameter checkpoint");
  }
  return manifest.value("meta", json::object());
}

json load_parameters(const fs::path& dir, const nn::ParameterRefs& params) {
  const json manifest = read_json(dir / "manifest.json");
  if (manifest.value("format", "") != "rom-params-v1") {
    throw FormatError(dir.string() + ": not a parameter checkpoint");
  }
  try {
    const auto& entries = manifest.at("parameters");
    if (entries.size() != params.size()) {
      throw FormatError(dir.string() + ": expected " + std::to_string(params.size()) +
                        " parameters, found " + std::to_string(entries.size()));
    }
    const std::vector<double> flat =
        read_f64(dir / "params.bin", manifest.at("count").get<std::size_t>(),
                 manifest.at("crc32").get<std::uint32_t>());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& e = entries[i];
      nn::Parameter* p = params[i];
      const auto shape = e.at("shape").get<nn::Shape>();
      if (e.at("name").get<std::string>() != p->name || shape != p->value.shape()) {
        throw FormatError(dir.string() + ": parameter " + std::to_string(i) + " is " +
                          e.at("name").get<std::string>() + nn::shape_string(shape) +
                          ", model expects " + p->name + nn::shape_string(p->value.shape()));
      }
      const auto offset = e.at("offset").get<std::size_t>();
      if (offset + p->value.size() > flat.size()) throw FormatError("parameter out of range");
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), p->value.size(),
                  p->value.data());
    }
    return manifest.value("meta", json::object());
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + ": malformed manifest: " + e.what());
  }
}

}  // namespace rom::io

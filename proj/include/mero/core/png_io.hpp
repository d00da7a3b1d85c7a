#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mero/core/raster.hpp"

namespace mero::core {

using Rgb = std::array<std::uint8_t, 3>;

// Encoders produce byte-identical output for identical input (no timestamps
// or text chunks are written).
std::string encode_png(const Raster& raster);
std::string encode_png_bilevel(const Mask& mask);
std::string encode_png_indexed(const IndexMap& map, const std::vector<Rgb>& palette);

// Gray and gray+alpha decode to 1 channel, everything else to 3 channels.
// With keep_indices a palette image yields its raw indices as 1 channel.
Raster decode_png(const std::string& bytes, bool keep_indices = false);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

inline Raster read_png(const std::filesystem::path& path, bool keep_indices = false) {
  return decode_png(read_file(path), keep_indices);
}

}  // namespace mero::core

#include "mero/core/png_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "mero/error.hpp"

namespace mero::core {
namespace {

struct ReadCursor {
  const std::string* bytes;
  std::size_t pos;
};

void on_error(png_structp png, png_const_charp msg) {
  // libpng requires this not to return; unwind through its jmp_buf.
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}

void on_warning(png_structp, png_const_charp) {}

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

void no_flush(png_structp) {}

void read_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->bytes->size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(data, cur->bytes->data() + cur->pos, len);
  cur->pos += len;
}

// Shared encoder: rows are handed over already packed for bit_depth.
std::string encode(int width, int height, int bit_depth, int color_type, const std::vector<Rgb>* palette,
                   const std::vector<std::vector<std::uint8_t>>& rows) {
  std::string error, out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, on_error, on_warning);
  if (!png) throw Error("png: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("png encode failed: " + error);
  }
  png_set_write_fn(png, &out, append_bytes, no_flush);
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> pal;
  if (palette) {
    for (const Rgb& c : *palette) pal.push_back(png_color{c[0], c[1], c[2]});
    png_set_PLTE(png, info, pal.data(), static_cast<int>(pal.size()));
  }
  png_write_info(png, info);
  for (const auto& row : rows) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace

std::string encode_png(const Raster& raster) {
  MERO_CHECK(raster.channels == 1 || raster.channels == 3, "png: only gray or RGB rasters are encoded");
  MERO_CHECK(raster.width > 0 && raster.height > 0, "png: empty raster");
  std::vector<std::vector<std::uint8_t>> rows(raster.height);
  const std::size_t stride = static_cast<std::size_t>(raster.width) * raster.channels;
  for (int y = 0; y < raster.height; ++y)
    rows[y].assign(raster.data.begin() + y * stride, raster.data.begin() + (y + 1) * stride);
  return encode(raster.width, raster.height, 8, raster.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                nullptr, rows);
}

std::string encode_png_bilevel(const Mask& mask) {
  MERO_CHECK(mask.size > 0, "png: empty mask");
  std::vector<std::vector<std::uint8_t>> rows(mask.size, std::vector<std::uint8_t>((mask.size + 7) / 8, 0));
  for (int y = 0; y < mask.size; ++y)
    for (int x = 0; x < mask.size; ++x)
      if (mask.at(y, x)) rows[y][x / 8] |= static_cast<std::uint8_t>(0x80 >> (x % 8));
  return encode(mask.size, mask.size, 1, PNG_COLOR_TYPE_GRAY, nullptr, rows);
}

std::string encode_png_indexed(const IndexMap& map, const std::vector<Rgb>& palette) {
  MERO_CHECK(!palette.empty() && palette.size() <= 256, "png: palette must hold 1..256 entries");
  for (std::uint8_t v : map.index) MERO_CHECK(v < palette.size(), "png: index outside palette");
  std::vector<std::vector<std::uint8_t>> rows(map.height);
  for (int y = 0; y < map.height; ++y)
    rows[y].assign(map.index.begin() + static_cast<std::size_t>(y) * map.width,
                   map.index.begin() + static_cast<std::size_t>(y + 1) * map.width);
  return encode(map.width, map.height, 8, PNG_COLOR_TYPE_PALETTE, &palette, rows);
}

Raster decode_png(const std::string& bytes, bool keep_indices) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw FormatError("not a PNG stream");
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, on_error, on_warning);
  if (!png) throw Error("png: cannot allocate reader");
  png_infop info = png_create_info_struct(png);
  Raster out;
  ReadCursor cursor{&bytes, 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png decode failed: " + error);
  }
  png_set_read_fn(png, &cursor, read_bytes);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  // Also drops a palette tRNS chunk once it has been expanded to alpha.
  png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_PALETTE) {
    if (keep_indices) {
      if (depth < 8) png_set_packing(png);
    } else {
      png_set_palette_to_rgb(png);
    }
  } else if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  }
  png_read_update_info(png, info);
  const int channels = png_get_channels(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = channels;
  out.data.resize(static_cast<std::size_t>(out.width) * out.height * channels);
  std::vector<png_bytep> rows(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = out.data.data() + static_cast<std::size_t>(y) * out.width * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (out.channels != 1 && out.channels != 3) throw FormatError("png: unsupported channel layout");
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write on " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace mero::core

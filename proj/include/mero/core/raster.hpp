#pragma once

#include <cstdint>
#include <vector>

#include "mero/core/geometry.hpp"

namespace mero::core {

// 8-bit raster with interleaved channels (1 = gray, 3 = RGB).
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  Raster() = default;
  Raster(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t& at(int y, int x, int ch = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + ch]; }
  std::uint8_t at(int y, int x, int ch = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
  bool empty() const { return data.empty(); }
  bool operator==(const Raster&) const = default;
};

// Binary m x m part mask expressed in the part's own box frame.
struct Mask {
  int size = 0;
  std::vector<std::uint8_t> bits;  // 0/1, row-major

  Mask() = default;
  explicit Mask(int m, std::uint8_t fill = 0) : size(m), bits(static_cast<std::size_t>(m) * m, fill) {}

  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * size + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * size + x]; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

// Nearest-neighbour resample of any single-channel raster to an m x m mask;
// values >= 128 count as foreground.
Mask mask_from_raster(const Raster& gray, int m);
Mask resize_mask(const Mask& mask, int m);
Mask mirror_mask(const Mask& mask);

// Per-pixel part index: 0 = background, slot + 1 otherwise.
struct IndexMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> index;

  IndexMap() = default;
  IndexMap(int w, int h) : width(w), height(h), index(static_cast<std::size_t>(w) * h, 0) {}
  std::uint8_t at(int y, int x) const { return index[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int y, int x) { return index[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const IndexMap&) const = default;
};

// Slots in paint order: descending box area, and among equal areas the lower
// slot comes later so it ends up on top.
std::vector<int> paint_order(const std::vector<Box>& boxes, const std::vector<std::uint8_t>& presence);

// Warps each present mask into its box on a width x height canvas with
// nearest-neighbour sampling at pixel centres and paints in paint_order.
// Masks of absent slots may be empty. Boxes covering no pixel centre are
// skipped and reported through `skipped` when given.
IndexMap compose_index_map(const std::vector<Mask>& masks, const std::vector<Box>& boxes,
                           const std::vector<std::uint8_t>& presence, int width, int height,
                           std::vector<int>* skipped = nullptr);

// Inclusive-exclusive pixel span [lo, hi) of pixel centres inside [a, b).
struct Span {
  int lo = 0;
  int hi = 0;
};
Span pixel_span(double a, double b, int extent);

}  // namespace mero::core

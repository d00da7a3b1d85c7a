#include "mero/core/raster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mero/error.hpp"

namespace mero::core {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Mask mask_from_raster(const Raster& gray, int m) {
  MERO_CHECK(gray.channels == 1 && gray.width > 0 && gray.height > 0, "mask raster must be non-empty grayscale");
  Mask out(m);
  for (int y = 0; y < m; ++y) {
    const int sy = std::min(gray.height - 1, static_cast<int>((y + 0.5) * gray.height / m));
    for (int x = 0; x < m; ++x) {
      const int sx = std::min(gray.width - 1, static_cast<int>((x + 0.5) * gray.width / m));
      out.at(y, x) = gray.at(sy, sx) >= 128 ? 1 : 0;
    }
  }
  return out;
}

Mask resize_mask(const Mask& mask, int m) {
  if (mask.size == m) return mask;
  Mask out(m);
  for (int y = 0; y < m; ++y) {
    const int sy = std::min(mask.size - 1, static_cast<int>((y + 0.5) * mask.size / m));
    for (int x = 0; x < m; ++x) {
      const int sx = std::min(mask.size - 1, static_cast<int>((x + 0.5) * mask.size / m));
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

Mask mirror_mask(const Mask& mask) {
  Mask out(mask.size);
  for (int y = 0; y < mask.size; ++y)
    for (int x = 0; x < mask.size; ++x) out.at(y, x) = mask.at(y, mask.size - 1 - x);
  return out;
}

std::vector<int> paint_order(const std::vector<Box>& boxes, const std::vector<std::uint8_t>& presence) {
  std::vector<int> slots;
  for (std::size_t s = 0; s < presence.size(); ++s)
    if (presence[s]) slots.push_back(static_cast<int>(s));
  std::stable_sort(slots.begin(), slots.end(), [&](int a, int b) {
    const double aa = boxes[a].area(), ab = boxes[b].area();
    if (aa != ab) return aa > ab;
    return a > b;
  });
  return slots;
}

Span pixel_span(double a, double b, int extent) {
  // Pixel i has its centre at (i + 0.5) / extent; keep centres in [a, b).
  Span s;
  s.lo = std::max(0, static_cast<int>(std::ceil(a * extent - 0.5)));
  s.hi = std::min(extent, static_cast<int>(std::ceil(b * extent - 0.5)));
  if (s.hi < s.lo) s.hi = s.lo;
  return s;
}

IndexMap compose_index_map(const std::vector<Mask>& masks, const std::vector<Box>& boxes,
                           const std::vector<std::uint8_t>& presence, int width, int height,
                           std::vector<int>* skipped) {
  MERO_CHECK(masks.size() == presence.size() && boxes.size() == presence.size(),
             "compose: masks, boxes and presence must have one entry per slot");
  MERO_CHECK(presence.size() < 255, "compose: too many slots for an 8-bit index map");
  IndexMap out(width, height);
  for (int slot : paint_order(boxes, presence)) {
    const Box& b = boxes[slot];
    const Mask& m = masks[slot];
    const Span xs = pixel_span(b.x0, b.x1, width);
    const Span ys = pixel_span(b.y0, b.y1, height);
    if (xs.hi <= xs.lo || ys.hi <= ys.lo || m.size == 0) {
      if (skipped) skipped->push_back(slot);
      continue;
    }
    // Sample the mask over the covered pixel rectangle so the whole m x m
    // grid lands inside it, whatever the sub-pixel box position.
    const int nx = xs.hi - xs.lo, ny = ys.hi - ys.lo;
    for (int y = ys.lo; y < ys.hi; ++y) {
      const int my = std::min(m.size - 1, (2 * (y - ys.lo) + 1) * m.size / (2 * ny));
      for (int x = xs.lo; x < xs.hi; ++x) {
        const int mx = std::min(m.size - 1, (2 * (x - xs.lo) + 1) * m.size / (2 * nx));
        if (m.at(my, mx)) out.at(y, x) = static_cast<std::uint8_t>(slot + 1);
      }
    }
  }
  return out;
}

}  // namespace mero::core

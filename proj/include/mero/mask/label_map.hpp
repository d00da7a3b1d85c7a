#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mero/core/png_io.hpp"
#include "mero/core/raster.hpp"
#include "mero/core/sample.hpp"
#include "mero/nn/tensor.hpp"

namespace mero::mask {

// Composed part canvas. The one-hot H x W x p tensor is stored as a per-pixel
// index (0 = background, slot + 1 = part), which makes the channel sum of 0
// or 1 hold by construction.
struct LabelMap {
  int category = 0;
  int p = 0;
  core::IndexMap canvas;
  std::vector<core::Box> boxes;          // boxes used for warping, p entries
  std::vector<std::uint8_t> presence;    // p

  // [1, p, H, W] one-hot planes.
  nn::Tensor one_hot() const;
  // Number of pixels carrying each slot.
  std::vector<int> channel_areas() const;
  bool operator==(const LabelMap&) const = default;
};

// Nearest-neighbour warp of each present mask into its box on a
// canvas x canvas grid; larger boxes are painted first. Slots whose box
// covers no pixel centre are skipped with a warning.
LabelMap compose_label_map(const std::vector<core::Mask>& masks, const std::vector<core::Box>& boxes,
                           const std::vector<std::uint8_t>& presence, int category, int canvas = core::kCanvasSize);

// Ground-truth label map of a dataset sample.
LabelMap label_map_of(const core::ObjectSample& sample, int canvas = core::kCanvasSize);

// Stable colour per slot; entry 0 is the background.
std::vector<core::Rgb> slot_palette(int p);

// Interchange format: <stem>.png holds the index map as a palette PNG,
// <stem>.json the category, p, canvas size and boxes.
std::string encode_label_map_png(const LabelMap& map);
std::string label_map_sidecar(const LabelMap& map);
void write_label_map(const std::filesystem::path& png_path, const LabelMap& map);
LabelMap read_label_map(const std::filesystem::path& png_path);
LabelMap label_map_from(const std::string& png_bytes, const std::string& sidecar_json);

}  // namespace mero::mask

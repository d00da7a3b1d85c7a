#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mero/core/sample.hpp"
#include "mero/core/schema.hpp"
#include "mero/nn/rng.hpp"

namespace mero::core {

// Object annotations in source pixel coordinates, before canonicalisation.
struct RawObject {
  double source_width = 0.0;
  double source_height = 0.0;
  std::vector<int> slots;
  std::vector<Box> boxes;          // pixels, one per slot
  std::vector<Raster> masks;       // gray, box-frame crops of any size; may be empty
  std::optional<Raster> image;     // RGB, source_width x source_height
};

struct Normalized {
  std::vector<Box> boxes;        // canonical, one per raw slot
  std::vector<Mask> masks;       // m x m, one per raw slot when masks were given
  std::optional<Raster> image;   // canvas x canvas RGB
  double scale = 1.0;            // source px -> canonical units
  double offset_x = 0.0;
  double offset_y = 0.0;
};

// Maps the source frame into the unit canvas with one isotropic scale,
// 1 / max(source extent), and recentres the union of the part boxes on
// (0.5, 0.5). Background pixels of the resampled image are white.
Normalized normalize_object(const RawObject& raw, int mask_resolution = kDefaultMaskResolution,
                            int canvas = kCanvasSize);

struct AugmentConfig {
  double translate = 0.0;         // max |shift| per axis, canonical units
  double part_scale_min = 1.0;    // per-part, per-axis factors about the box centre
  double part_scale_max = 1.0;
  double object_scale_min = 1.0;  // per-axis factors about the canvas centre
  double object_scale_max = 1.0;
  double mirror_probability = 0.0;

  bool is_identity() const;
  void validate() const;
};

// Random layout augmentation. Per-part scaling is skipped for samples that
// carry an image, since pixels cannot follow an individual part's box.
ObjectSample augment(const ObjectSample& sample, const AugmentConfig& config, nn::Rng& rng);

struct Split {
  std::vector<ObjectSample> train;
  std::vector<ObjectSample> val;
  std::vector<ObjectSample> test;
};

struct SplitRatios {
  double train = 0.75;
  double val = 0.15;
  double test = 0.10;
};

// Stratified per category. Categories with fewer than three samples go to
// train whole.
Split split_dataset(const std::vector<ObjectSample>& samples, nn::Rng& rng, SplitRatios ratios = {});

struct Dataset {
  Schema schema;
  std::vector<ObjectSample> samples;
  std::vector<int> categories;  // ids with at least one sample, ascending
};

// On-disk layout:
//   <root>/<category>/<sample_id>/meta             JSON, see below
//   <root>/<category>/<sample_id>/masks/<slot>.png 1-bit (or 8-bit gray)
//   <root>/<category>/<sample_id>/image.png        8-bit RGB, optional
// meta: {"category": name, "parts": [{"name": n, "box": [x0,y0,x1,y1]}...]}
// plus either "normalized": true (boxes in canonical units, masks m x m in
// the box frame, image on the canonical canvas) or "source_size": [w, h]
// (boxes in source pixels, masks as box-frame crops, image at source size).
Dataset load_dataset(const std::filesystem::path& root, const std::filesystem::path& schema_path,
                     int mask_resolution = kDefaultMaskResolution);

// Writes normalised samples in the layout above.
void write_dataset(const std::filesystem::path& root, const Schema& schema, const std::vector<ObjectSample>& samples);

}  // namespace mero::core

#include "mero/core/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mero/core/png_io.hpp"
#include "mero/error.hpp"

namespace fs = std::filesystem;

namespace mero::core {
namespace {

Box hull_of(const std::vector<Box>& boxes) {
  Box h = boxes.front();
  for (const Box& b : boxes) {
    h.x0 = std::min(h.x0, b.x0);
    h.y0 = std::min(h.y0, b.y0);
    h.x1 = std::max(h.x1, b.x1);
    h.y1 = std::max(h.y1, b.y1);
  }
  return h;
}

Box hull_of_present(const PartGraph& g) {
  std::vector<Box> boxes;
  for (int s : g.present_slots()) boxes.push_back(g.boxes[s]);
  return boxes.empty() ? Box{0.5, 0.5, 0.5, 0.5} : hull_of(boxes);
}

// Nearest-neighbour resample of an RGB raster: output pixel centre X (in
// canonical units) reads source position inverse(X). White outside.
template <class Inverse>
Raster resample_rgb(const Raster& src, int width, int height, double src_unit_w, double src_unit_h, Inverse inverse) {
  Raster out(width, height, 3, 255);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      auto [u, v] = inverse((x + 0.5) / width, (y + 0.5) / height);
      const double sx = u * src_unit_w, sy = v * src_unit_h;
      if (!(sx >= 0.0 && sy >= 0.0 && sx < src.width && sy < src.height)) continue;
      const int ix = static_cast<int>(sx), iy = static_cast<int>(sy);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(iy, ix, c);
    }
  }
  return out;
}

Raster ensure_canvas(Raster img, int canvas) {
  if (img.width == canvas && img.height == canvas) return img;
  const int w = img.width, h = img.height;
  return resample_rgb(img, canvas, canvas, w, h, [](double u, double v) { return std::pair{u, v}; });
}

}  // namespace

Normalized normalize_object(const RawObject& raw, int mask_resolution, int canvas) {
  MERO_CHECK(!raw.boxes.empty(), "normalize: at least one box is required");
  MERO_CHECK(raw.slots.size() == raw.boxes.size(), "normalize: one slot per box");
  MERO_CHECK(raw.masks.empty() || raw.masks.size() == raw.boxes.size(), "normalize: one mask per box");
  const Box hull = hull_of(raw.boxes);
  MERO_CHECK(hull.width() > 0.0 && hull.height() > 0.0, "normalize: degenerate object hull (zero width or height)");
  double extent = std::max(raw.source_width, raw.source_height);
  if (!(extent > 0.0)) extent = std::max(hull.width(), hull.height());

  Normalized out;
  out.scale = 1.0 / extent;
  out.offset_x = 0.5 - out.scale * hull.cx();
  out.offset_y = 0.5 - out.scale * hull.cy();
  for (const Box& b : raw.boxes) {
    out.boxes.push_back(clamp_unit(Box{b.x0 * out.scale + out.offset_x, b.y0 * out.scale + out.offset_y,
                                       b.x1 * out.scale + out.offset_x, b.y1 * out.scale + out.offset_y}));
  }
  for (const Raster& m : raw.masks) out.masks.push_back(mask_from_raster(m, mask_resolution));
  if (raw.image) {
    MERO_CHECK(raw.image->channels == 3, "normalize: image must be RGB");
    const double s = out.scale, ox = out.offset_x, oy = out.offset_y;
    out.image = resample_rgb(*raw.image, canvas, canvas, 1.0, 1.0,
                             [&](double u, double v) { return std::pair{(u - ox) / s, (v - oy) / s}; });
  }
  return out;
}

bool AugmentConfig::is_identity() const {
  return translate == 0.0 && part_scale_min == 1.0 && part_scale_max == 1.0 && object_scale_min == 1.0 &&
         object_scale_max == 1.0 && mirror_probability == 0.0;
}

void AugmentConfig::validate() const {
  MERO_CHECK(translate >= 0.0 && translate < 1.0, "augment: translate must lie in [0, 1)");
  MERO_CHECK(part_scale_min > 0.0 && part_scale_min <= part_scale_max,
             "augment: part scale range must be positive and ordered (zero-area boxes otherwise)");
  MERO_CHECK(object_scale_min > 0.0 && object_scale_min <= object_scale_max,
             "augment: object scale range must be positive and ordered (zero-area boxes otherwise)");
  MERO_CHECK(mirror_probability >= 0.0 && mirror_probability <= 1.0, "augment: mirror probability outside [0, 1]");
}

ObjectSample augment(const ObjectSample& sample, const AugmentConfig& config, nn::Rng& rng) {
  config.validate();
  if (config.is_identity()) return sample;

  const int p = sample.graph.p;
  // Draw everything up front so the stream does not depend on the sample.
  const bool mirror = rng.uniform() < config.mirror_probability;
  const double osx = rng.uniform(config.object_scale_min, config.object_scale_max);
  const double osy = rng.uniform(config.object_scale_min, config.object_scale_max);
  double dx = rng.uniform(-config.translate, config.translate);
  double dy = rng.uniform(-config.translate, config.translate);
  std::vector<std::pair<double, double>> part_scale(static_cast<std::size_t>(p));
  for (auto& [sx, sy] : part_scale) {
    sx = rng.uniform(config.part_scale_min, config.part_scale_max);
    sy = rng.uniform(config.part_scale_min, config.part_scale_max);
  }
  const bool per_part = !sample.image.has_value();

  ObjectSample out = sample;
  auto& g = out.graph;
  for (int s : g.present_slots()) {
    Box b = g.boxes[s];
    const auto [sx, sy] = part_scale[s];
    if (per_part && sx != 1.0) {
      const double c = b.cx(), h = 0.5 * b.width() * sx;
      b.x0 = c - h;
      b.x1 = c + h;
    }
    if (per_part && sy != 1.0) {
      const double c = b.cy(), h = 0.5 * b.height() * sy;
      b.y0 = c - h;
      b.y1 = c + h;
    }
    if (mirror) b = Box{1.0 - b.x1, b.y0, 1.0 - b.x0, b.y1};
    if (osx != 1.0) b.x0 = (b.x0 - 0.5) * osx + 0.5, b.x1 = (b.x1 - 0.5) * osx + 0.5;
    if (osy != 1.0) b.y0 = (b.y0 - 0.5) * osy + 0.5, b.y1 = (b.y1 - 0.5) * osy + 0.5;
    g.boxes[s] = b;
    if (mirror) out.masks[s] = mirror_mask(out.masks[s]);
  }
  // Keep the shifted object on the canvas where it fits.
  const Box hull = hull_of_present(g);
  if (hull.width() <= 1.0) dx = std::clamp(dx, -hull.x0, 1.0 - hull.x1);
  if (hull.height() <= 1.0) dy = std::clamp(dy, -hull.y0, 1.0 - hull.y1);
  for (int s : g.present_slots()) {
    Box& b = g.boxes[s];
    if (dx != 0.0) b.x0 += dx, b.x1 += dx;
    if (dy != 0.0) b.y0 += dy, b.y1 += dy;
    b = clamp_unit(b);
  }

  if (out.image) {
    const Raster& src = *sample.image;
    out.image = resample_rgb(src, src.width, src.height, src.width, src.height, [&](double u, double v) {
      double x = (u - dx - 0.5) / osx + 0.5;
      const double y = (v - dy - 0.5) / osy + 0.5;
      if (mirror) x = 1.0 - x;
      return std::pair{x, y};
    });
  }
  return out;
}

Split split_dataset(const std::vector<ObjectSample>& samples, nn::Rng& rng, SplitRatios ratios) {
  MERO_CHECK(ratios.train >= 0 && ratios.val >= 0 && ratios.test >= 0 &&
                 std::abs(ratios.train + ratios.val + ratios.test - 1.0) < 1e-9,
             "split: ratios must be non-negative and sum to 1");
  std::map<int, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < samples.size(); ++i) by_category[samples[i].category()].push_back(i);

  std::vector<std::size_t> train, val, test;
  for (auto& [category, idx] : by_category) {
    const std::size_t n = idx.size();
    if (n < 3) {
      spdlog::warn("split: category {} has only {} sample(s); all go to train", category, n);
      train.insert(train.end(), idx.begin(), idx.end());
      continue;
    }
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(n))));
    const auto n_val =
        std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios.val * static_cast<double>(n))));
    train.insert(train.end(), idx.begin(), idx.begin() + n_train);
    val.insert(val.end(), idx.begin() + n_train, idx.begin() + n_train + n_val);
    test.insert(test.end(), idx.begin() + n_train + n_val, idx.end());
  }
  Split out;
  auto gather = [&](std::vector<std::size_t>& ids, std::vector<ObjectSample>& dst) {
    std::sort(ids.begin(), ids.end());
    for (auto i : ids) dst.push_back(samples[i]);
  };
  gather(train, out.train);
  gather(val, out.val);
  gather(test, out.test);
  return out;
}

namespace {

ObjectSample load_sample(const fs::path& dir, const Schema& schema, int category_id, int mask_resolution) {
  const std::string where = dir.string();
  nlohmann::json meta;
  {
    std::ifstream in(dir / "meta");
    if (!in) throw FormatError(where + ": missing meta");
    try {
      meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + "/meta: " + e.what());
    }
  }
  const CategorySchema& cat = schema.category(category_id);
  std::vector<int> slots;
  std::vector<Box> boxes;
  bool normalized = false;
  double src_w = 0, src_h = 0;
  std::vector<std::string> unknown;
  try {
    if (meta.at("category").get<std::string>() != cat.name)
      throw FormatError(where + "/meta: category field disagrees with directory " + cat.name);
    normalized = meta.value("normalized", false);
    if (!normalized) {
      const auto& size = meta.at("source_size");
      src_w = size.at(0).get<double>();
      src_h = size.at(1).get<double>();
    }
    for (const auto& part : meta.at("parts")) {
      const auto name = part.at("name").get<std::string>();
      const auto slot = cat.slot_of(name);
      if (!slot) {
        unknown.push_back(name);
        continue;
      }
      if (std::find(slots.begin(), slots.end(), *slot) != slots.end())
        throw FormatError(where + "/meta: part " + name + " listed twice");
      const auto& jb = part.at("box");
      slots.push_back(*slot);
      boxes.push_back(Box{jb.at(0).get<double>(), jb.at(1).get<double>(), jb.at(2).get<double>(),
                          jb.at(3).get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + "/meta: " + e.what());
  }
  if (!unknown.empty()) {
    std::string names;
    for (const auto& n : unknown) names += (names.empty() ? "" : ", ") + n;
    throw ValidationError(where + ": parts not in the schema for " + cat.name + ": " + names);
  }
  if (slots.empty()) throw FormatError(where + "/meta: no parts listed");

  std::vector<Raster> raw_masks;
  for (int s : slots) {
    const fs::path mp = dir / "masks" / (std::to_string(s) + ".png");
    if (!fs::exists(mp)) throw FormatError(where + ": missing mask for slot " + std::to_string(s));
    try {
      raw_masks.push_back(read_png(mp));
    } catch (const FormatError& e) {
      throw FormatError(mp.string() + ": " + e.what());
    }
    if (raw_masks.back().channels != 1) throw FormatError(mp.string() + ": mask must be grayscale");
  }
  std::optional<Raster> image;
  if (fs::exists(dir / "image.png")) {
    try {
      image = read_png(dir / "image.png");
    } catch (const FormatError& e) {
      throw FormatError((dir / "image.png").string() + ": " + e.what());
    }
    if (image->channels != 3) throw FormatError((dir / "image.png").string() + ": image must be RGB");
  }

  ObjectSample s;
  s.id = cat.name + "/" + dir.filename().string();
  s.mask_resolution = mask_resolution;
  s.graph = PartGraph(schema.p, category_id);
  s.masks.assign(static_cast<std::size_t>(schema.p), Mask{});
  std::vector<Mask> masks;
  if (normalized) {
    for (const Raster& r : raw_masks) masks.push_back(mask_from_raster(r, mask_resolution));
    if (image) s.image = ensure_canvas(std::move(*image), kCanvasSize);
  } else {
    RawObject raw{src_w, src_h, slots, boxes, std::move(raw_masks), std::move(image)};
    Normalized norm;
    try {
      norm = normalize_object(raw, mask_resolution);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    boxes = norm.boxes;
    masks = std::move(norm.masks);
    s.image = std::move(norm.image);
  }
  for (std::size_t k = 0; k < slots.size(); ++k) {
    s.graph.presence[slots[k]] = 1;
    s.graph.boxes[slots[k]] = boxes[k];
    s.masks[slots[k]] = std::move(masks[k]);
  }
  s.graph.adjacency = restrict_adjacency(schema.adjacency_template(category_id), s.graph.presence);
  try {
    s.validate(schema);
  } catch (const ValidationError& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return s;
}

}  // namespace

Dataset load_dataset(const fs::path& root, const fs::path& schema_path, int mask_resolution) {
  Dataset ds;
  ds.schema = load_schema(schema_path);
  if (!fs::is_directory(root)) throw NotFoundError("dataset root is not a directory: " + root.string());

  struct Job {
    fs::path dir;
    int category;
  };
  std::vector<Job> jobs;
  std::vector<fs::path> cat_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) cat_dirs.push_back(e.path());
  std::sort(cat_dirs.begin(), cat_dirs.end());
  for (const auto& cd : cat_dirs) {
    const auto id = ds.schema.find_category(cd.filename().string());
    if (!id) throw ValidationError(cd.string() + ": directory names a category missing from the schema");
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(cd))
      if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (auto& d : dirs) jobs.push_back({d, *id});
  }

  std::vector<ObjectSample> loaded(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(jobs.size()); ++i) {
    try {
      loaded[i] = load_sample(jobs[i].dir, ds.schema, jobs[i].category, mask_resolution);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  ds.samples = std::move(loaded);
  std::vector<int> count(static_cast<std::size_t>(ds.schema.category_count()), 0);
  for (const auto& s : ds.samples) ++count[s.category()];
  for (const auto& c : ds.schema.categories) {
    if (count[c.id] > 0)
      ds.categories.push_back(c.id);
    else
      spdlog::warn("dataset: category {} has no samples under {}; skipped", c.name, root.string());
  }
  return ds;
}

void write_dataset(const fs::path& root, const Schema& schema, const std::vector<ObjectSample>& samples) {
  fs::create_directories(root);
  for (const auto& s : samples) {
    s.validate(schema);
    const auto& cat = schema.category(s.category());
    std::string leaf = s.id;
    if (auto slash = leaf.rfind('/'); slash != std::string::npos) leaf = leaf.substr(slash + 1);
    MERO_CHECK(!leaf.empty() && leaf != "." && leaf != "..", "write_dataset: sample id has no usable name");
    const fs::path dir = root / cat.name / leaf;
    fs::create_directories(dir / "masks");
    nlohmann::json parts = nlohmann::json::array();
    for (int slot : s.part_list()) {
      const Box& b = s.graph.boxes[slot];
      parts.push_back({{"name", cat.part_name_for_slot(slot)}, {"box", {b.x0, b.y0, b.x1, b.y1}}});
      write_file(dir / "masks" / (std::to_string(slot) + ".png"), encode_png_bilevel(s.masks[slot]));
    }
    nlohmann::json meta = {{"category", cat.name}, {"normalized", true}, {"parts", parts}};
    std::ofstream(dir / "meta") << meta.dump(2) << "\n";
    if (s.image) write_file(dir / "image.png", encode_png(*s.image));
  }
}

}  // namespace mero::core

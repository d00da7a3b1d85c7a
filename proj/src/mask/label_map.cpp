#include "mero/mask/label_map.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mero/error.hpp"

namespace mero::mask {

nn::Tensor LabelMap::one_hot() const {
  const int h = canvas.height, w = canvas.width;
  nn::Tensor t({1, p, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (const int v = canvas.at(y, x)) t.at(0, v - 1, y, x) = 1.0;
  return t;
}

std::vector<int> LabelMap::channel_areas() const {
  std::vector<int> areas(static_cast<std::size_t>(p), 0);
  for (auto v : canvas.index)
    if (v) ++areas[v - 1];
  return areas;
}

LabelMap compose_label_map(const std::vector<core::Mask>& masks, const std::vector<core::Box>& boxes,
                           const std::vector<std::uint8_t>& presence, int category, int canvas) {
  LabelMap out;
  out.category = category;
  out.p = static_cast<int>(presence.size());
  out.boxes = boxes;
  out.presence = presence;
  std::vector<int> skipped;
  out.canvas = core::compose_index_map(masks, boxes, presence, canvas, canvas, &skipped);
  for (int s : skipped) spdlog::warn("compose: slot {} has a box covering no pixel; skipped", s);
  return out;
}

LabelMap label_map_of(const core::ObjectSample& s, int canvas) {
  return compose_label_map(s.masks, s.graph.boxes, s.graph.presence, s.category(), canvas);
}

std::vector<core::Rgb> slot_palette(int p) {
  std::vector<core::Rgb> pal{{0, 0, 0}};
  for (int s = 0; s < p; ++s) {
    // Golden-angle hue steps keep neighbouring slots distinct.
    const double hue = std::fmod(s * 137.508, 360.0) / 60.0;
    const double c = 0.85, x = c * (1 - std::abs(std::fmod(hue, 2.0) - 1)), m = 0.1;
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hue)) {
      case 0: r = c, g = x; break;
      case 1: r = x, g = c; break;
      case 2: g = c, b = x; break;
      case 3: g = x, b = c; break;
      case 4: r = x, b = c; break;
      default: r = c, b = x; break;
    }
    auto q = [m](double v) { return static_cast<std::uint8_t>(std::lround((v + m) * 255.0)); };
    pal.push_back({q(r), q(g), q(b)});
  }
  return pal;
}

std::string encode_label_map_png(const LabelMap& map) {
  return core::encode_png_indexed(map.canvas, slot_palette(map.p));
}

std::string label_map_sidecar(const LabelMap& map) {
  nlohmann::json boxes = nlohmann::json::array();
  for (int s = 0; s < map.p; ++s) {
    if (!map.presence[s]) continue;
    const auto& b = map.boxes[s];
    boxes.push_back({{"slot", s}, {"box", {b.x0, b.y0, b.x1, b.y1}}});
  }
  nlohmann::json j = {{"category", map.category},
                      {"p", map.p},
                      {"width", map.canvas.width},
                      {"height", map.canvas.height},
                      {"boxes", boxes}};
  return j.dump(2) + "\n";
}

void write_label_map(const std::filesystem::path& png_path, const LabelMap& map) {
  core::write_file(png_path, encode_label_map_png(map));
  auto side = png_path;
  side.replace_extension(".json");
  core::write_file(side, label_map_sidecar(map));
}

LabelMap label_map_from(const std::string& png_bytes, const std::string& sidecar_json) {
  LabelMap map;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(sidecar_json);
    map.category = j.at("category").get<int>();
    map.p = j.at("p").get<int>();
    MERO_CHECK(map.p > 0 && map.p < 255, "label map: p out of range");
    map.boxes.assign(static_cast<std::size_t>(map.p), core::Box{});
    map.presence.assign(static_cast<std::size_t>(map.p), 0);
    for (const auto& e : j.at("boxes")) {
      const int s = e.at("slot").get<int>();
      MERO_CHECK(s >= 0 && s < map.p, "label map: slot out of range");
      const auto& b = e.at("box");
      map.boxes[s] = core::Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                               b.at(3).get<double>()};
      map.presence[s] = 1;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("label map sidecar: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(std::string("label map sidecar: ") + e.what());
  }
  const core::Raster r = core::decode_png(png_bytes, true);
  if (r.channels != 1) throw FormatError("label map: PNG must be indexed");
  if (r.width != j.at("width").get<int>() || r.height != j.at("height").get<int>())
    throw FormatError("label map: PNG size disagrees with the sidecar");
  map.canvas = core::IndexMap(r.width, r.height);
  map.canvas.index = r.data;
  for (auto v : map.canvas.index) {
    if (v > map.p) throw FormatError("label map: index beyond p");
    if (v && !map.presence[v - 1]) throw FormatError("label map: pixel labelled with a slot that has no box");
  }
  return map;
}

LabelMap read_label_map(const std::filesystem::path& png_path) {
  auto side = png_path;
  side.replace_extension(".json");
  return label_map_from(core::read_file(png_path), core::read_file(side));
}

}  // namespace mero::mask

#include "mero/core/procedural.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "mero/core/dataset.hpp"
#include "mero/core/png_io.hpp"
#include "mero/error.hpp"

namespace mero::core {
namespace {

const char* const kPartNames[] = {"torso", "head", "arm", "leg", "tail", "neck", "wing", "ear"};

std::string part_name(int k) {
  if (k < static_cast<int>(std::size(kPartNames))) return kPartNames[k];
  return "part" + std::to_string(k);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

struct PartStyle {
  double width, height;  // base size, abstract units
  double angle;          // attachment direction from the parent
  bool ellipse;
  Rgb color;
};

// Fixed per (category, slot); independent of the sampling stream.
std::vector<PartStyle> category_style(const ProceduralCategory& cat) {
  std::vector<PartStyle> styles;
  nn::Rng r(nn::mix_seed(fnv1a(cat.name), 0x5eed));
  for (int k = 0; k < cat.part_count; ++k) {
    PartStyle s;
    if (k == 0) {
      s.width = r.uniform(0.9, 1.4);
      s.height = r.uniform(0.7, 1.2);
      s.angle = 0.0;
    } else {
      s.width = r.uniform(0.3, 0.7);
      s.height = r.uniform(0.3, 0.7);
      // Spread limbs around the parent, roughly evenly, with a category offset.
      s.angle = 2.0 * std::numbers::pi * (k - 1) / std::max(1, cat.part_count - 1) + r.uniform(-0.3, 0.3);
    }
    s.ellipse = r.uniform() < 0.5;
    for (auto& c : s.color) c = static_cast<std::uint8_t>(r.uniform_int(30, 220));
    styles.push_back(s);
  }
  return styles;
}

Mask outline_mask(const PartStyle& s, int m) {
  Mask mask(m);
  for (int y = 0; y < m; ++y) {
    for (int x = 0; x < m; ++x) {
      const double u = (x + 0.5) / m * 2.0 - 1.0, v = (y + 0.5) / m * 2.0 - 1.0;
      // Rounded rectangle: cut the four corners.
      const bool inside = s.ellipse ? (u * u + v * v <= 1.0) : (std::abs(u) + std::abs(v) <= 1.6);
      mask.at(y, x) = inside ? 1 : 0;
    }
  }
  return mask;
}

}  // namespace

Topology parse_topology(const std::string& name) {
  if (name == "chain") return Topology::chain;
  if (name == "star") return Topology::star;
  throw ValidationError("unknown topology " + name + " (expected chain or star)");
}

ProceduralCorpus make_procedural_corpus(const ProceduralSpec& spec, nn::Rng& rng) {
  MERO_CHECK(spec.max_slots > 0 && spec.max_slots < 254, "procedural: max_slots out of range");
  MERO_CHECK(spec.mask_resolution > 0 && spec.canvas > 0, "procedural: resolutions must be positive");
  MERO_CHECK(spec.drop_probability >= 0.0 && spec.drop_probability < 1.0, "procedural: drop probability outside [0,1)");
  ProceduralCorpus corpus;
  for (const auto& c : spec.categories) {
    MERO_CHECK(c.part_count >= 1, "procedural: " + c.name + " needs at least one part");
    MERO_CHECK(c.part_count <= spec.max_slots, "procedural: " + c.name + " has " + std::to_string(c.part_count) +
                                                   " parts, more than the configured " +
                                                   std::to_string(spec.max_slots) + " slots");
    MERO_CHECK(c.samples >= 0, "procedural: negative sample count");
    CategorySchema cs;
    cs.name = c.name;
    for (int k = 0; k < c.part_count; ++k) {
      cs.part_names.push_back(part_name(k));
      cs.part_slots.push_back(k);
      if (k > 0) cs.edges.emplace_back(c.topology == Topology::chain ? k - 1 : 0, k);
    }
    corpus.schema.categories.push_back(std::move(cs));
  }
  corpus.schema.finalize();
  const int p = corpus.schema.p;

  for (std::size_t ci = 0; ci < spec.categories.size(); ++ci) {
    const auto& cat = spec.categories[ci];
    const auto styles = category_style(cat);
    std::vector<Mask> outlines;
    for (const auto& s : styles) outlines.push_back(outline_mask(s, spec.mask_resolution));
    const auto tmpl = corpus.schema.adjacency_template(static_cast<int>(ci));

    for (int n = 0; n < cat.samples; ++n) {
      // Lay out parts in abstract units, root at the origin.
      std::vector<double> cx(cat.part_count), cy(cat.part_count), w(cat.part_count), h(cat.part_count);
      std::vector<std::uint8_t> present(cat.part_count, 1);
      for (int k = 0; k < cat.part_count; ++k) {
        const auto& s = styles[k];
        w[k] = s.width * rng.uniform(1.0 - spec.size_jitter, 1.0 + spec.size_jitter);
        h[k] = s.height * rng.uniform(1.0 - spec.size_jitter, 1.0 + spec.size_jitter);
        const double theta = s.angle + rng.uniform(-spec.articulation, spec.articulation);
        const bool drop = rng.uniform() < spec.drop_probability;
        if (k == 0) {
          cx[0] = cy[0] = 0.0;
          continue;
        }
        present[k] = drop ? 0 : 1;
        const int parent = cat.topology == Topology::chain ? k - 1 : 0;
        const double dx = std::cos(theta), dy = std::sin(theta);
        auto reach = [&](int i) { return 0.5 * (std::abs(dx) * w[i] + std::abs(dy) * h[i]); };
        const double dist = reach(parent) + 0.6 * reach(k);
        cx[k] = cx[parent] + dx * dist;
        cy[k] = cy[parent] + dy * dist;
      }

      RawObject raw;
      for (int k = 0; k < cat.part_count; ++k) {
        if (!present[k]) continue;
        raw.slots.push_back(k);
        raw.boxes.push_back(Box{cx[k] - 0.5 * w[k], cy[k] - 0.5 * h[k], cx[k] + 0.5 * w[k], cy[k] + 0.5 * h[k]});
      }
      // The hull becomes the source frame, so the object fills the canvas.
      Box hull = raw.boxes.front();
      for (const Box& b : raw.boxes) {
        hull.x0 = std::min(hull.x0, b.x0);
        hull.y0 = std::min(hull.y0, b.y0);
        hull.x1 = std::max(hull.x1, b.x1);
        hull.y1 = std::max(hull.y1, b.y1);
      }
      for (Box& b : raw.boxes) b = Box{b.x0 - hull.x0, b.y0 - hull.y0, b.x1 - hull.x0, b.y1 - hull.y0};
      raw.source_width = hull.width();
      raw.source_height = hull.height();
      const Normalized norm = normalize_object(raw, spec.mask_resolution, spec.canvas);

      ObjectSample s;
      char id[64];
      std::snprintf(id, sizeof id, "%s_%04d", cat.name.c_str(), n);
      s.id = id;
      s.mask_resolution = spec.mask_resolution;
      s.graph = PartGraph(p, static_cast<int>(ci));
      s.masks.assign(static_cast<std::size_t>(p), Mask{});
      for (std::size_t j = 0; j < raw.slots.size(); ++j) {
        const int slot = raw.slots[j];
        s.graph.presence[slot] = 1;
        s.graph.boxes[slot] = norm.boxes[j];
        s.masks[slot] = outlines[slot];
      }
      s.graph.adjacency = restrict_adjacency(tmpl, s.graph.presence);

      if (spec.images) {
        const IndexMap idx = compose_index_map(s.masks, s.graph.boxes, s.graph.presence, spec.canvas, spec.canvas);
        Raster img(spec.canvas, spec.canvas, 3, 255);
        for (int y = 0; y < spec.canvas; ++y) {
          for (int x = 0; x < spec.canvas; ++x) {
            const int v = idx.at(y, x);
            if (v == 0) continue;
            const Box& b = s.graph.boxes[v - 1];
            // Vertical shading inside each part gives the translator some texture.
            const double t = b.height() > 0 ? ((y + 0.5) / spec.canvas - b.y0) / b.height() : 0.5;
            const double shade = 1.15 - 0.35 * std::clamp(t, 0.0, 1.0);
            for (int ch = 0; ch < 3; ++ch)
              img.at(y, x, ch) = static_cast<std::uint8_t>(std::clamp(styles[v - 1].color[ch] * shade, 0.0, 255.0));
          }
        }
        s.image = std::move(img);
      }
      s.validate(corpus.schema);
      corpus.samples.push_back(std::move(s));
    }
  }
  return corpus;
}

}  // namespace mero::core

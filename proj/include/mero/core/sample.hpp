#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mero/core/geometry.hpp"
#include "mero/core/raster.hpp"
#include "mero/core/schema.hpp"
#include "mero/nn/tensor.hpp"

namespace mero::core {

inline constexpr int kDefaultMaskResolution = 64;
inline constexpr int kCanvasSize = 128;

// Presence, boxes and connectivity of one object over the global slot frame.
struct PartGraph {
  int p = 0;
  int category = 0;
  std::vector<std::uint8_t> presence;   // p
  std::vector<Box> boxes;               // p, zero for absent slots
  std::vector<std::uint8_t> adjacency;  // p x p, row-major

  PartGraph() = default;
  PartGraph(int slots, int category_id);

  bool edge(int a, int b) const { return adjacency[static_cast<std::size_t>(a) * p + b] != 0; }
  void set_edge(int a, int b, bool on);
  std::vector<int> present_slots() const;

  // X as [p, 5]: presence followed by x0, y0, x1, y1.
  nn::Tensor features() const;
  nn::Tensor adjacency_tensor() const;

  // Throws ValidationError naming the first broken invariant.
  void validate() const;
  bool operator==(const PartGraph&) const = default;
};

// Ground-truth A for a sample: the category template restricted to present
// slots.
std::vector<std::uint8_t> restrict_adjacency(const std::vector<std::uint8_t>& tmpl,
                                             const std::vector<std::uint8_t>& presence);

struct ObjectSample {
  std::string id;
  PartGraph graph;
  int mask_resolution = kDefaultMaskResolution;
  std::vector<Mask> masks;      // p entries; empty Mask for absent slots
  std::optional<Raster> image;  // RGB on the canonical canvas

  int category() const { return graph.category; }
  std::vector<int> part_list() const { return graph.present_slots(); }

  void validate() const;
  // Also checks slots and edges against the category's schema entry.
  void validate(const Schema& schema) const;
  bool operator==(const ObjectSample&) const = default;
};

// Line-oriented text document with a fixed field order; reals use 9
// significant digits, masks and pixels are hex encoded.
std::string serialize_sample(const ObjectSample& sample);
ObjectSample deserialize_sample(const std::string& text);

}  // namespace mero::core

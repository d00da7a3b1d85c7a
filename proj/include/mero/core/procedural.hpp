#pragma once

#include <string>
#include <vector>

#include "mero/core/sample.hpp"
#include "mero/core/schema.hpp"
#include "mero/nn/rng.hpp"

// Articulated stick-figure sprites: a torso-like root part with limbs hung
// off it either in a chain or as a star. Each (category, slot) pair has a
// fixed outline and colour; poses, sizes and presence vary per sample.
namespace mero::core {

enum class Topology { chain, star };

struct ProceduralCategory {
  std::string name;
  int part_count = 4;
  Topology topology = Topology::star;
  int samples = 8;
};

struct ProceduralSpec {
  std::vector<ProceduralCategory> categories;
  int max_slots = 8;
  int mask_resolution = kDefaultMaskResolution;
  int canvas = kCanvasSize;
  bool images = true;
  double drop_probability = 0.0;  // chance that a non-root part is absent
  double articulation = 0.35;     // joint angle jitter, radians
  double size_jitter = 0.1;       // relative part size jitter
};

struct ProceduralCorpus {
  Schema schema;
  std::vector<ObjectSample> samples;
};

// Slot k of every category holds that category's k-th part, so p is the
// largest part count.
ProceduralCorpus make_procedural_corpus(const ProceduralSpec& spec, nn::Rng& rng);

Topology parse_topology(const std::string& name);

}  // namespace mero::core

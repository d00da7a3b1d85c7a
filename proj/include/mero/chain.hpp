#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "mero/box/model.hpp"
#include "mero/core/schema.hpp"
#include "mero/mask/model.hpp"
#include "mero/translate/model.hpp"

namespace mero::chain {

// The three trained stages, loaded read-only and shared between callers.
struct ModelBundle {
  std::shared_ptr<const box::BoxGcnVae> box;
  std::shared_ptr<const mask::LabelMapVae> mask;
  std::shared_ptr<const translate::Translator> translator;
  std::optional<core::Schema> schema;  // <dir>/schema.json when present

  int p() const { return box->config().p; }
  int categories() const { return box->config().categories; }
  int canvas() const { return translator->config().resolution; }
  void validate() const;
};

// <dir>/<stage>.ckpt, else <dir>/<stage>/best.ckpt.
std::filesystem::path resolve_checkpoint(const std::filesystem::path& dir, const std::string& stage);
ModelBundle load_models(const std::filesystem::path& dir);

struct GeneratedObject {
  int category = 0;
  std::vector<std::uint8_t> part_list;
  std::uint64_t seed = 0;
  core::PartGraph layout;
  mask::LabelMap label_map;
  core::Raster sprite;
};

// layout -> label map -> sprite, all randomness drawn from `seed`.
GeneratedObject generate_object(const ModelBundle& models, int category, const std::vector<std::uint8_t>& part_list,
                                std::uint64_t seed);

}  // namespace mero::chain

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mero/chain.hpp"
#include "mero/core/sample.hpp"
#include "mero/mask/label_map.hpp"

namespace mero::service {

// Everything produced for one object, kept so that edits can restart the
// chain at any stage.
struct EditSession {
  std::string id;
  int category = 0;
  std::vector<std::uint8_t> part_list;  // p entries, the requested parts
  std::uint64_t seed = 0;
  core::PartGraph layout;
  std::vector<double> mask_latent;  // z of the label-map stage
  mask::LabelMap label_map;
  std::optional<core::Raster> image;
  std::int64_t revision = 0;

  // Layout, schema ownership and label-map consistency; throws
  // ValidationError.
  void validate(const core::Schema& schema) const;
  bool operator==(const EditSession&) const = default;
};

enum class EditKind { set_part_list, set_boxes, set_masks, regenerate_layout, regenerate_masks, render };

std::string edit_kind_name(EditKind kind);
EditKind parse_edit_kind(const std::string& name);

// Payloads, by kind:
//   set_part_list  {"parts": ["head", "torso"]}
//   set_boxes      {"boxes": {"head": [x0, y0, x1, y1]}}   present parts only
//   set_masks      {"label_map_png": "<base64 palette PNG>"} canvas sized;
//                  index 0 = background, slot + 1 = part, 255 = keep
//   others         {}
struct EditCommand {
  EditKind kind = EditKind::render;
  nlohmann::json payload = nlohmann::json::object();
  std::int64_t base_revision = 0;

  nlohmann::json to_json() const;
  static EditCommand from_json(const nlohmann::json& j);
};

struct CreateRequest {
  std::string category;
  std::optional<std::vector<std::string>> parts;
  std::optional<std::uint64_t> seed;

  nlohmann::json to_json() const;
  static CreateRequest from_json(const nlohmann::json& j);
};

// Observed part lists per category id, duplicates kept so that drawing an
// entry uniformly follows the empirical distribution.
using PartListTable = std::map<int, std::vector<std::vector<std::uint8_t>>>;

PartListTable part_lists_of(const std::vector<core::ObjectSample>& samples);
// {"cow": [["head", "torso"], ...], ...}
nlohmann::json part_lists_to_json(const PartListTable& table, const core::Schema& schema);
PartListTable part_lists_from_json(const nlohmann::json& j, const core::Schema& schema);

// The generation chain plus the edit rules. Stateless apart from the
// read-only models, so one instance may serve concurrent requests.
class Pipeline {
 public:
  Pipeline(chain::ModelBundle models, PartListTable part_lists);

  const core::Schema& schema() const { return *models_.schema; }
  const chain::ModelBundle& models() const { return models_; }

  // Unknown categories and parts raise ValidationError naming them. A
  // request without a seed gets a random one, reported in the session.
  EditSession create(const CreateRequest& request, const std::string& id = "") const;
  // Checks base_revision (ConflictError) and returns the edited session with
  // revision + 1.
  EditSession apply(const EditSession& session, const EditCommand& command) const;

  std::vector<std::uint8_t> resolve_parts(int category, const std::vector<std::string>& names) const;
  std::vector<std::uint8_t> sample_part_list(int category, std::uint64_t seed) const;

 private:
  void run_masks(EditSession& s) const;
  void run_render(EditSession& s) const;
  void run_layout(EditSession& s, nn::Rng& rng) const;

  chain::ModelBundle models_;
  PartListTable part_lists_;
};

// Client view of a session. PNGs are referenced by URL and SHA-256.
nlohmann::json snapshot(const EditSession& session, const core::Schema& schema);
std::string label_map_png(const EditSession& session);
std::optional<std::string> image_png(const EditSession& session);

std::string sha256_hex(const std::string& bytes);
std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

}  // namespace mero::service

#include "mero/service/session.hpp"

#include <cmath>
#include <random>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "mero/error.hpp"

namespace mero::service {

namespace {

const std::vector<std::pair<EditKind, const char*>> kKinds = {
    {EditKind::set_part_list, "set_part_list"},         {EditKind::set_boxes, "set_boxes"},
    {EditKind::set_masks, "set_masks"},                 {EditKind::regenerate_layout, "regenerate_layout"},
    {EditKind::regenerate_masks, "regenerate_masks"},   {EditKind::render, "render"},
};

constexpr std::uint8_t kKeepIndex = 255;
constexpr std::uint64_t kPartListStream = 0x9a27;

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

template <class Fn>
auto with_payload(const std::string& kind, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(kind + ": malformed payload: " + e.what());
  }
}

}  // namespace

void EditSession::validate(const core::Schema& schema) const {
  layout.validate();
  const auto& cat = schema.category(category);
  MERO_CHECK(layout.category == category, "session: layout category differs from the session category");
  MERO_CHECK(layout.p == schema.p && static_cast<int>(part_list.size()) == schema.p,
             "session: slot count differs from the schema");
  for (int s = 0; s < layout.p; ++s) {
    if (part_list[s]) MERO_CHECK(cat.owns_slot(s), "session: part list names a slot outside " + cat.name);
    if (layout.presence[s]) MERO_CHECK(part_list[s], "session: layout has a part that was not requested");
  }
  MERO_CHECK(label_map.category == category && label_map.p == layout.p, "session: label map header mismatch");
  MERO_CHECK(label_map.presence == layout.presence, "session: label map presence differs from the layout");
  MERO_CHECK(label_map.boxes == layout.boxes, "session: label map boxes differ from the layout");
  for (std::uint8_t v : label_map.canvas.index)
    MERO_CHECK(v == 0 || (v <= layout.p && layout.presence[v - 1]),
               "session: label map paints a slot that is not present");
  if (image) {
    MERO_CHECK(image->channels == 3, "session: image must be RGB");
    MERO_CHECK(image->width == label_map.canvas.width && image->height == label_map.canvas.height,
               "session: image size differs from the label map");
  }
}

std::string edit_kind_name(EditKind kind) {
  for (const auto& [k, n] : kKinds)
    if (k == kind) return n;
  throw ValidationError("unknown edit kind");
}

EditKind parse_edit_kind(const std::string& name) {
  for (const auto& [k, n] : kKinds)
    if (name == n) return k;
  throw ValidationError("unknown edit kind '" + name + "'");
}

nlohmann::json EditCommand::to_json() const {
  return {{"kind", edit_kind_name(kind)}, {"base_revision", base_revision}, {"payload", payload}};
}

EditCommand EditCommand::from_json(const nlohmann::json& j) {
  return with_payload("edit command", [&] {
    EditCommand c;
    c.kind = parse_edit_kind(j.at("kind").get<std::string>());
    c.base_revision = j.at("base_revision").get<std::int64_t>();
    if (j.contains("payload")) c.payload = j.at("payload");
    MERO_CHECK(c.payload.is_object(), "edit command: payload must be an object");
    return c;
  });
}

nlohmann::json CreateRequest::to_json() const {
  nlohmann::json j = {{"category", category}};
  if (parts) j["part_list"] = *parts;
  if (seed) j["seed"] = *seed;
  return j;
}

CreateRequest CreateRequest::from_json(const nlohmann::json& j) {
  return with_payload("create", [&] {
    CreateRequest r;
    r.category = j.at("category").get<std::string>();
    if (j.contains("part_list") && !j.at("part_list").is_null())
      r.parts = j.at("part_list").get<std::vector<std::string>>();
    if (j.contains("seed") && !j.at("seed").is_null()) r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  });
}

PartListTable part_lists_of(const std::vector<core::ObjectSample>& samples) {
  PartListTable table;
  for (const auto& s : samples) table[s.category()].push_back(s.graph.presence);
  return table;
}

nlohmann::json part_lists_to_json(const PartListTable& table, const core::Schema& schema) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [c, lists] : table) {
    const auto& cat = schema.category(c);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& list : lists) {
      std::vector<std::string> names;
      for (std::size_t i = 0; i < cat.part_names.size(); ++i)
        if (list.at(cat.part_slots[i])) names.push_back(cat.part_names[i]);
      arr.push_back(names);
    }
    j[cat.name] = arr;
  }
  return j;
}

PartListTable part_lists_from_json(const nlohmann::json& j, const core::Schema& schema) {
  PartListTable table;
  try {
    for (const auto& [name, arr] : j.items()) {
      const auto c = schema.find_category(name);
      if (!c) throw FormatError("part lists: unknown category '" + name + "'");
      const auto& cat = schema.category(*c);
      for (const auto& list : arr) {
        std::vector<std::uint8_t> presence(schema.p, 0);
        for (const auto& part : list) {
          const auto slot = cat.slot_of(part.get<std::string>());
          if (!slot) throw FormatError("part lists: " + name + " has no part '" + part.get<std::string>() + "'");
          presence[*slot] = 1;
        }
        table[*c].push_back(std::move(presence));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("part lists: ") + e.what());
  }
  return table;
}

Pipeline::Pipeline(chain::ModelBundle models, PartListTable part_lists)
    : models_(std::move(models)), part_lists_(std::move(part_lists)) {
  if (!models_.schema) throw ValidationError("pipeline: the model bundle carries no schema");
  models_.validate();
}

std::vector<std::uint8_t> Pipeline::resolve_parts(int category, const std::vector<std::string>& names) const {
  const auto& cat = schema().category(category);
  std::vector<std::uint8_t> presence(schema().p, 0);
  std::vector<std::string> unknown;
  for (const auto& n : names) {
    if (const auto slot = cat.slot_of(n))
      presence[*slot] = 1;
    else
      unknown.push_back(n);
  }
  if (!unknown.empty()) throw ValidationError("parts not in " + cat.name + ": " + join(unknown));
  if (names.empty()) throw ValidationError("part list for " + cat.name + " is empty");
  return presence;
}

std::vector<std::uint8_t> Pipeline::sample_part_list(int category, std::uint64_t seed) const {
  const auto it = part_lists_.find(category);
  if (it == part_lists_.end() || it->second.empty()) {
    spdlog::warn("no training part lists for {}; using every part", schema().category(category).name);
    return schema().slot_mask(category);
  }
  nn::Rng rng(nn::mix_seed(seed, kPartListStream));
  return it->second[rng.uniform_int(0, static_cast<int>(it->second.size()) - 1)];
}

void Pipeline::run_layout(EditSession& s, nn::Rng& rng) const {
  s.layout = box::sample_layout(*models_.box, s.category, s.part_list, rng, box::PresenceRule::requested);
}

void Pipeline::run_masks(EditSession& s) const {
  const int latent = models_.mask->config().latent;
  MERO_CHECK(static_cast<int>(s.mask_latent.size()) == latent, "session: mask latent has the wrong size");
  nn::Tensor z({1, latent});
  for (int i = 0; i < latent; ++i) z[i] = s.mask_latent[i];
  std::vector<core::Mask> masks = mask::binarize(mask::decode_for_layout(*models_.mask, s.layout, z), 0);
  for (int k = 0; k < s.layout.p; ++k)
    if (!s.layout.presence[k]) masks[k] = core::Mask{};
  s.label_map = mask::compose_label_map(masks, s.layout.boxes, s.layout.presence, s.category, models_.canvas());
}

void Pipeline::run_render(EditSession& s) const { s.image = translate::render_sprite(*models_.translator, s.label_map); }

EditSession Pipeline::create(const CreateRequest& request, const std::string& id) const {
  const auto cat = schema().find_category(request.category);
  if (!cat) throw ValidationError("unknown category '" + request.category + "'");
  EditSession s;
  s.id = id;
  s.category = *cat;
  // 53 bits keep the seed exact in JavaScript clients.
  s.seed = request.seed ? *request.seed : (std::random_device{}() * 0x100000000ull + std::random_device{}()) >> 11;
  s.part_list = request.parts ? resolve_parts(*cat, *request.parts) : sample_part_list(*cat, s.seed);

  nn::Rng rng(s.seed);
  run_layout(s, rng);
  s.mask_latent = rng.normal_tensor({1, models_.mask->config().latent}).storage();
  run_masks(s);
  run_render(s);
  s.validate(schema());
  return s;
}

EditSession Pipeline::apply(const EditSession& session, const EditCommand& command) const {
  if (command.base_revision != session.revision)
    throw ConflictError("session " + session.id + " is at revision " + std::to_string(session.revision) +
                        ", edit was based on revision " + std::to_string(command.base_revision));
  const std::string kind = edit_kind_name(command.kind);
  const auto& cat = schema().category(session.category);
  EditSession s = session;
  // Regeneration draws from a stream keyed by the revision it produces, so a
  // replayed edit sequence lands on the same state.
  nn::Rng regen(nn::mix_seed(session.seed, static_cast<std::uint64_t>(session.revision + 1)));

  switch (command.kind) {
    case EditKind::set_part_list: {
      const auto names = with_payload(kind, [&] { return command.payload.at("parts").get<std::vector<std::string>>(); });
      s.part_list = resolve_parts(s.category, names);
      // Same draws as create(), so the result matches a fresh session with
      // this part list and seed.
      nn::Rng rng(s.seed);
      run_layout(s, rng);
      s.mask_latent = rng.normal_tensor({1, models_.mask->config().latent}).storage();
      run_masks(s);
      run_render(s);
      break;
    }
    case EditKind::set_boxes: {
      const nlohmann::json boxes = with_payload(kind, [&] { return command.payload.at("boxes"); });
      MERO_CHECK(boxes.is_object(), "set_boxes: boxes must map part names to [x0, y0, x1, y1]");
      for (const auto& [name, value] : boxes.items()) {
        const auto slot = cat.slot_of(name);
        if (!slot) throw ValidationError("set_boxes: " + cat.name + " has no part '" + name + "'");
        if (!s.layout.presence[*slot]) throw ValidationError("set_boxes: part '" + name + "' is not present");
        const auto v = with_payload(kind, [&] { return value.get<std::vector<double>>(); });
        const bool ok = v.size() == 4 && std::all_of(v.begin(), v.end(), [](double x) {
                          return std::isfinite(x) && x >= 0.0 && x <= 1.0;
                        }) && v[0] < v[2] && v[1] < v[3];
        if (!ok) throw ValidationError("set_boxes: invalid box for '" + name + "' (need 0 <= x0 < x1 <= 1, 0 <= y0 < y1 <= 1)");
        s.layout.boxes[*slot] = core::Box{v[0], v[1], v[2], v[3]};
      }
      s.layout.validate();
      run_masks(s);
      run_render(s);
      break;
    }
    case EditKind::set_masks: {
      const auto encoded = with_payload(kind, [&] { return command.payload.at("label_map_png").get<std::string>(); });
      core::Raster painted;
      try {
        painted = core::decode_png(base64_decode(encoded), true);
      } catch (const FormatError& e) {
        throw ValidationError(std::string("set_masks: ") + e.what());
      }
      const auto& canvas = s.label_map.canvas;
      if (painted.channels != 1 || painted.width != canvas.width || painted.height != canvas.height)
        throw ValidationError("set_masks: expected a " + std::to_string(canvas.width) + "x" +
                              std::to_string(canvas.height) + " palette PNG");
      std::vector<std::string> bad;
      core::IndexMap merged = canvas;
      for (std::size_t i = 0; i < painted.data.size(); ++i) {
        const std::uint8_t v = painted.data[i];
        if (v == kKeepIndex) continue;
        if (v != 0 && (v > s.layout.p || !s.layout.presence[v - 1])) {
          const std::string label =
              v <= s.layout.p && cat.owns_slot(v - 1) ? cat.part_name_for_slot(v - 1) : "index " + std::to_string(v);
          if (std::find(bad.begin(), bad.end(), label) == bad.end()) bad.push_back(label);
          continue;
        }
        merged.index[i] = v;
      }
      if (!bad.empty()) throw ValidationError("set_masks: paints parts that are not present: " + join(bad));
      s.label_map.canvas = std::move(merged);
      run_render(s);
      break;
    }
    case EditKind::regenerate_layout:
      run_layout(s, regen);
      run_masks(s);
      run_render(s);
      break;
    case EditKind::regenerate_masks:
      s.mask_latent = regen.normal_tensor({1, models_.mask->config().latent}).storage();
      run_masks(s);
      run_render(s);
      break;
    case EditKind::render:
      run_render(s);
      break;
  }
  s.revision = session.revision + 1;
  s.validate(schema());
  return s;
}

std::string label_map_png(const EditSession& session) { return mask::encode_label_map_png(session.label_map); }

std::optional<std::string> image_png(const EditSession& session) {
  if (!session.image) return std::nullopt;
  return core::encode_png(*session.image);
}

nlohmann::json snapshot(const EditSession& s, const core::Schema& schema) {
  const auto& cat = schema.category(s.category);
  const std::string base = "/sessions/" + s.id;
  nlohmann::json parts = nlohmann::json::array();
  std::vector<std::string> requested;
  for (std::size_t i = 0; i < cat.part_names.size(); ++i) {
    const int slot = cat.part_slots[i];
    if (s.part_list[slot]) requested.push_back(cat.part_names[i]);
    if (!s.layout.presence[slot]) continue;
    const auto& b = s.layout.boxes[slot];
    parts.push_back({{"name", cat.part_names[i]}, {"slot", slot}, {"box", {b.x0, b.y0, b.x1, b.y1}}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (int a = 0; a < s.layout.p; ++a)
    for (int b = a + 1; b < s.layout.p; ++b)
      if (s.layout.edge(a, b)) edges.push_back({cat.part_name_for_slot(a), cat.part_name_for_slot(b)});
  const auto areas = s.label_map.channel_areas();
  nlohmann::json area_json = nlohmann::json::object();
  for (int k = 0; k < s.layout.p; ++k)
    if (s.layout.presence[k]) area_json[cat.part_name_for_slot(k)] = areas[k];
  const std::string rev = "?revision=" + std::to_string(s.revision);

  nlohmann::json j = {
      {"id", s.id},
      {"revision", s.revision},
      {"category", cat.name},
      {"category_id", s.category},
      {"seed", s.seed},
      {"part_list", requested},
      {"layout", {{"parts", parts}, {"edges", edges}}},
      {"label_map",
       {{"href", base + "/label_map.png" + rev},
        {"sidecar", base + "/label_map.json" + rev},
        {"canvas", s.label_map.canvas.width},
        {"areas", area_json},
        {"sha256", sha256_hex(label_map_png(s))}}},
      {"image", nullptr},
  };
  if (const auto png = image_png(s)) j["image"] = {{"href", base + "/image.png" + rev}, {"sha256", sha256_hex(*png)}};
  return j;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(n);
  return out;
}

std::string base64_decode(const std::string& text) {
  std::string clean;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) clean += c;
  if (clean.size() % 4 != 0) throw FormatError("base64: length is not a multiple of 4");
  std::string out(3 * clean.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
  if (n < 0) throw FormatError("base64: invalid characters");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(n - pad);
  return out;
}

}  // namespace mero::service

#include "mero/service/store.hpp"

#include <charconv>

#include <spdlog/spdlog.h>

#include "mero/core/png_io.hpp"
#include "mero/error.hpp"

namespace fs = std::filesystem;

namespace mero::service {

namespace {

constexpr const char* kFormat = "mero-session-1";

std::optional<std::uint64_t> id_number(const std::string& id) {
  if (id.size() < 2 || id[0] != 's') return std::nullopt;
  std::uint64_t n = 0;
  const auto [ptr, ec] = std::from_chars(id.data() + 1, id.data() + id.size(), n);
  if (ec != std::errc{} || ptr != id.data() + id.size()) return std::nullopt;
  return n;
}

}  // namespace

nlohmann::json session_to_json(const EditSession& s) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : s.layout.boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
  return {
      {"format", kFormat},
      {"id", s.id},
      {"revision", s.revision},
      {"category", s.category},
      {"seed", s.seed},
      {"part_list", s.part_list},
      {"layout", {{"presence", s.layout.presence}, {"boxes", boxes}, {"adjacency", s.layout.adjacency}}},
      {"mask_latent", s.mask_latent},
      {"label_map", nlohmann::json::parse(mask::label_map_sidecar(s.label_map))},
      {"has_image", s.image.has_value()},
  };
}

EditSession session_from_bundle(const nlohmann::json& j, const std::string& label_map_png,
                                const std::optional<std::string>& image_png) {
  try {
    if (j.at("format") != kFormat) throw FormatError("session: unknown format " + j.at("format").dump());
    EditSession s;
    s.id = j.at("id").get<std::string>();
    s.revision = j.at("revision").get<std::int64_t>();
    s.category = j.at("category").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.part_list = j.at("part_list").get<std::vector<std::uint8_t>>();
    const auto& layout = j.at("layout");
    const int p = static_cast<int>(s.part_list.size());
    s.layout = core::PartGraph(p, s.category);
    s.layout.presence = layout.at("presence").get<std::vector<std::uint8_t>>();
    s.layout.adjacency = layout.at("adjacency").get<std::vector<std::uint8_t>>();
    const auto boxes = layout.at("boxes").get<std::vector<std::array<double, 4>>>();
    if (static_cast<int>(boxes.size()) != p) throw FormatError("session: box count differs from the part list");
    s.layout.boxes.clear();
    for (const auto& b : boxes) s.layout.boxes.push_back({b[0], b[1], b[2], b[3]});
    s.mask_latent = j.at("mask_latent").get<std::vector<double>>();
    s.label_map = mask::label_map_from(label_map_png, j.at("label_map").dump());
    if (j.at("has_image").get<bool>()) {
      if (!image_png) throw FormatError("session: image.png is missing");
      s.image = core::decode_png(*image_png);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("session: ") + e.what());
  }
}

SessionStore::SessionStore(fs::path root, const core::Schema& schema) : root_(std::move(root)), schema_(schema) {
  if (fs::exists(root_) && !fs::is_directory(root_)) {
    const auto moved = quarantine(root_);
    spdlog::warn("session store {} is not a directory; moved to {} and starting fresh", root_.string(),
                 moved.string());
  }
  fs::create_directories(root_);
}

fs::path SessionStore::quarantine(const fs::path& path) {
  const fs::path qdir = fs::is_directory(root_) ? root_ / "quarantine" : fs::path(root_.string() + ".quarantine");
  fs::create_directories(qdir);
  fs::path target = qdir / path.filename();
  for (int n = 1; fs::exists(target); ++n) target = qdir / (path.filename().string() + "." + std::to_string(n));
  fs::rename(path, target);
  quarantined_.push_back(target);
  return target;
}

std::vector<EditSession> SessionStore::load_all() {
  std::lock_guard lock(mutex_);
  // Finish or roll back an interrupted save before reading anything.
  for (const auto& entry : fs::directory_iterator(root_)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 5 && name[0] == '.' && name.ends_with(".old")) {
      const auto live = root_ / name.substr(1, name.size() - 5);
      if (fs::exists(live))
        fs::remove_all(entry.path());
      else
        fs::rename(entry.path(), live);
    } else if (name.size() > 5 && name[0] == '.' && name.ends_with(".new")) {
      fs::remove_all(entry.path());
    }
  }
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root_))
    if (entry.path().filename() != "quarantine" && entry.path().filename().string()[0] != '.')
      dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());

  std::vector<EditSession> sessions;
  for (const auto& dir : dirs) {
    try {
      if (!fs::is_directory(dir)) throw FormatError("not a session directory");
      const auto j = nlohmann::json::parse(core::read_file(dir / "session.json"));
      std::optional<std::string> image;
      if (fs::exists(dir / "image.png")) image = core::read_file(dir / "image.png");
      EditSession s = session_from_bundle(j, core::read_file(dir / "label_map.png"), image);
      if (s.id != dir.filename().string()) throw FormatError("session id differs from its directory");
      s.validate(schema_);
      if (const auto n = id_number(s.id)) counter_ = std::max(counter_, *n);
      sessions.push_back(std::move(s));
    } catch (const std::exception& e) {
      const auto moved = quarantine(dir);
      spdlog::warn("quarantined session bundle {} -> {}: {}", dir.string(), moved.string(), e.what());
    }
  }
  return sessions;
}

void SessionStore::save(const EditSession& s) const {
  const fs::path live = root_ / s.id;
  const fs::path fresh = root_ / ("." + s.id + ".new");
  const fs::path old = root_ / ("." + s.id + ".old");
  fs::remove_all(fresh);
  fs::create_directories(fresh);
  core::write_file(fresh / "label_map.png", label_map_png(s));
  if (const auto png = image_png(s)) core::write_file(fresh / "image.png", *png);
  core::write_file(fresh / "session.json", session_to_json(s).dump(2) + "\n");
  // live -> old, new -> live, drop old; load_all() repairs a crash between
  // the two renames.
  if (fs::exists(live)) fs::rename(live, old);
  fs::rename(fresh, live);
  fs::remove_all(old);
}

std::string SessionStore::next_id() {
  std::lock_guard lock(mutex_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(++counter_));
  return buf;
}

SessionService::SessionService(const Pipeline& pipeline, fs::path store_dir)
    : pipeline_(pipeline), store_(std::move(store_dir), pipeline.schema()) {
  for (auto& s : store_.load_all()) {
    auto slot = std::make_shared<Slot>();
    const std::string id = s.id;
    slot->session = std::move(s);
    sessions_.emplace(id, std::move(slot));
  }
  spdlog::info("session store {}: {} sessions loaded, {} quarantined", store_.root().string(), sessions_.size(),
               store_.quarantined().size());
}

std::shared_ptr<SessionService::Slot> SessionService::slot(const std::string& id) const {
  std::lock_guard lock(map_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("no session '" + id + "'");
  return it->second;
}

EditSession SessionService::create(const CreateRequest& request) {
  const std::string id = store_.next_id();
  auto fresh = std::make_shared<Slot>();
  fresh->session = pipeline_.create(request, id);
  store_.save(fresh->session);
  std::lock_guard lock(map_mutex_);
  sessions_.emplace(id, fresh);
  return fresh->session;
}

EditSession SessionService::get(const std::string& id) const {
  const auto s = slot(id);
  std::lock_guard lock(s->mutex);
  return s->session;
}

EditSession SessionService::edit(const std::string& id, const EditCommand& command) {
  const auto s = slot(id);
  std::lock_guard lock(s->mutex);
  EditSession next = pipeline_.apply(s->session, command);
  store_.save(next);
  s->session = std::move(next);
  return s->session;
}

std::vector<std::string> SessionService::ids() const {
  std::lock_guard lock(map_mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : sessions_) out.push_back(id);
  return out;
}

}  // namespace mero::service

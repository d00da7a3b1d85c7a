#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mero/service/session.hpp"

namespace mero::service {

// One directory per session under the store root:
//   <root>/<id>/session.json   fields, layout, latent, label-map sidecar
//   <root>/<id>/label_map.png  palette PNG
//   <root>/<id>/image.png      sprite, when rendered
// Bundles that fail to parse or validate are moved to <root>/quarantine/.
class SessionStore {
 public:
  SessionStore(std::filesystem::path root, const core::Schema& schema);

  const std::filesystem::path& root() const { return root_; }
  std::vector<EditSession> load_all();
  void save(const EditSession& session) const;
  std::string next_id();
  const std::vector<std::filesystem::path>& quarantined() const { return quarantined_; }

 private:
  std::filesystem::path quarantine(const std::filesystem::path& path);

  std::filesystem::path root_;
  const core::Schema& schema_;
  std::mutex mutex_;
  std::uint64_t counter_ = 0;
  std::vector<std::filesystem::path> quarantined_;
};

nlohmann::json session_to_json(const EditSession& session);
EditSession session_from_bundle(const nlohmann::json& j, const std::string& label_map_png,
                                const std::optional<std::string>& image_png);

// Sessions in memory and on disk. Requests on different sessions run in
// parallel; requests on one session are serialised by a per-session lock.
class SessionService {
 public:
  SessionService(const Pipeline& pipeline, std::filesystem::path store_dir);

  EditSession create(const CreateRequest& request);
  EditSession get(const std::string& id) const;
  EditSession edit(const std::string& id, const EditCommand& command);
  std::vector<std::string> ids() const;
  const Pipeline& pipeline() const { return pipeline_; }
  const SessionStore& store() const { return store_; }

 private:
  struct Slot {
    std::mutex mutex;
    EditSession session;
  };
  std::shared_ptr<Slot> slot(const std::string& id) const;

  const Pipeline& pipeline_;
  SessionStore store_;
  mutable std::mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
};

}  // namespace mero::service

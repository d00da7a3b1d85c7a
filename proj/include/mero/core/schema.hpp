#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace mero::core {

struct CategorySchema {
  int id = 0;
  std::string name;
  std::vector<std::string> part_names;       // local order
  std::vector<int> part_slots;               // local index -> global slot
  std::vector<std::pair<int, int>> edges;    // undirected, as global slots

  std::optional<int> slot_of(const std::string& part) const;
  bool owns_slot(int slot) const;
  std::string part_name_for_slot(int slot) const;
};

// Category ids are positions in `categories`; p = highest slot + 1.
struct Schema {
  std::vector<CategorySchema> categories;
  int p = 0;

  int category_count() const { return static_cast<int>(categories.size()); }
  const CategorySchema& category(int id) const;
  std::optional<int> find_category(const std::string& name) const;
  // Template adjacency of one category as a p x p 0/1 matrix (row-major).
  std::vector<std::uint8_t> adjacency_template(int category) const;
  // Global p-length 0/1 vector of the slots a category owns.
  std::vector<std::uint8_t> slot_mask(int category) const;

  // Recomputes p and checks slot injectivity and edge sanity.
  void finalize();
};

// Schema file (JSON):
//   {"categories": [{"name": "cow",
//                    "parts": [{"name": "torso", "slot": 0}, ...],
//                    "edges": [["head", "torso"], ...]}, ...]}
Schema schema_from_json(const nlohmann::json& j);
nlohmann::json schema_to_json(const Schema& schema);
Schema load_schema(const std::filesystem::path& path);
void save_schema(const std::filesystem::path& path, const Schema& schema);

}  // namespace mero::core

#include "mero/core/schema.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "mero/error.hpp"

namespace mero::core {

std::optional<int> CategorySchema::slot_of(const std::string& part) const {
  for (std::size_t i = 0; i < part_names.size(); ++i)
    if (part_names[i] == part) return part_slots[i];
  return std::nullopt;
}

bool CategorySchema::owns_slot(int slot) const {
  return std::find(part_slots.begin(), part_slots.end(), slot) != part_slots.end();
}

std::string CategorySchema::part_name_for_slot(int slot) const {
  for (std::size_t i = 0; i < part_slots.size(); ++i)
    if (part_slots[i] == slot) return part_names[i];
  throw ValidationError("category " + name + " has no part in slot " + std::to_string(slot));
}

const CategorySchema& Schema::category(int id) const {
  if (id < 0 || id >= category_count())
    throw ValidationError("category id " + std::to_string(id) + " outside [0, " + std::to_string(category_count()) +
                          ")");
  return categories[static_cast<std::size_t>(id)];
}

std::optional<int> Schema::find_category(const std::string& name) const {
  for (const auto& c : categories)
    if (c.name == name) return c.id;
  return std::nullopt;
}

std::vector<std::uint8_t> Schema::adjacency_template(int id) const {
  const auto& c = category(id);
  std::vector<std::uint8_t> a(static_cast<std::size_t>(p) * p, 0);
  for (auto [s, t] : c.edges) {
    a[static_cast<std::size_t>(s) * p + t] = 1;
    a[static_cast<std::size_t>(t) * p + s] = 1;
  }
  return a;
}

std::vector<std::uint8_t> Schema::slot_mask(int id) const {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(p), 0);
  for (int s : category(id).part_slots) m[static_cast<std::size_t>(s)] = 1;
  return m;
}

void Schema::finalize() {
  p = 0;
  std::set<std::string> names;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    auto& c = categories[i];
    c.id = static_cast<int>(i);
    MERO_CHECK(!c.name.empty(), "schema: category without a name");
    MERO_CHECK(names.insert(c.name).second, "schema: duplicate category " + c.name);
    MERO_CHECK(c.part_names.size() == c.part_slots.size(), "schema: " + c.name + " part/slot count mismatch");
    std::set<int> slots;
    std::set<std::string> parts;
    for (std::size_t k = 0; k < c.part_slots.size(); ++k) {
      const int s = c.part_slots[k];
      MERO_CHECK(s >= 0 && s < 254, "schema: " + c.name + " slot out of range");
      MERO_CHECK(slots.insert(s).second, "schema: " + c.name + " maps two parts to slot " + std::to_string(s));
      MERO_CHECK(parts.insert(c.part_names[k]).second, "schema: " + c.name + " repeats part " + c.part_names[k]);
      p = std::max(p, s + 1);
    }
    for (auto& [s, t] : c.edges) {
      MERO_CHECK(s != t, "schema: " + c.name + " has a self edge");
      MERO_CHECK(slots.count(s) && slots.count(t), "schema: " + c.name + " edge touches a slot it does not own");
      if (s > t) std::swap(s, t);
    }
    std::sort(c.edges.begin(), c.edges.end());
    c.edges.erase(std::unique(c.edges.begin(), c.edges.end()), c.edges.end());
  }
}

Schema schema_from_json(const nlohmann::json& j) {
  Schema schema;
  try {
    for (const auto& jc : j.at("categories")) {
      CategorySchema c;
      c.name = jc.at("name").get<std::string>();
      for (const auto& jp : jc.at("parts")) {
        c.part_names.push_back(jp.at("name").get<std::string>());
        c.part_slots.push_back(jp.at("slot").get<int>());
      }
      if (jc.contains("edges")) {
        for (const auto& je : jc.at("edges")) {
          const auto a = je.at(0).get<std::string>();
          const auto b = je.at(1).get<std::string>();
          auto sa = c.slot_of(a), sb = c.slot_of(b);
          if (!sa) throw ValidationError("schema: " + c.name + " edge names unknown part " + a);
          if (!sb) throw ValidationError("schema: " + c.name + " edge names unknown part " + b);
          c.edges.emplace_back(*sa, *sb);
        }
      }
      schema.categories.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("schema: ") + e.what());
  }
  schema.finalize();
  return schema;
}

nlohmann::json schema_to_json(const Schema& schema) {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : schema.categories) {
    nlohmann::json parts = nlohmann::json::array();
    for (std::size_t k = 0; k < c.part_names.size(); ++k)
      parts.push_back({{"name", c.part_names[k]}, {"slot", c.part_slots[k]}});
    nlohmann::json edges = nlohmann::json::array();
    for (auto [s, t] : c.edges) edges.push_back({c.part_name_for_slot(s), c.part_name_for_slot(t)});
    cats.push_back({{"name", c.name}, {"parts", parts}, {"edges", edges}});
  }
  return {{"categories", cats}};
}

Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("schema not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    return schema_from_json(j);
  } catch (const Error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_schema(const std::filesystem::path& path, const Schema& schema) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << schema_to_json(schema).dump(2) << "\n";
}

}  // namespace mero::core

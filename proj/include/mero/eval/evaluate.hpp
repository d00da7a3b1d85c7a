#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mero/chain.hpp"
#include "mero/core/sample.hpp"
#include "mero/eval/extractor.hpp"

namespace mero::eval {

// Generated sprites grouped by category id.
using EvalSet = std::map<int, std::vector<chain::GeneratedObject>>;

// For each category with test samples: n objects whose part lists are drawn
// uniformly with replacement from that category's test part lists. Object
// i of category c uses seed mix_seed(mix_seed(seed, c), i).
EvalSet generate_eval_set(const chain::ModelBundle& models, const std::vector<core::ObjectSample>& test,
                          int n_per_category, std::uint64_t seed, const std::vector<int>& categories);

struct CategoryScore {
  int category = 0;
  std::string name;
  double fid = 0.0;
  long real_count = 0;
  long fake_count = 0;
  bool shrunk = false;
};

struct EvalReport {
  std::string model = "mero";
  std::string extractor_id;
  std::uint64_t seed = 0;
  int n_per_category = 0;
  std::vector<CategoryScore> categories;  // ascending name
  double overall = 0.0;                   // arithmetic mean of category FIDs

  nlohmann::json to_json() const;
  // Header: model,overall,<category names>.
  std::string to_csv() const;
};

// Per-category FID of real test images against generated sprites.
EvalReport score_sets(const std::map<int, std::vector<core::Raster>>& real,
                      const std::map<int, std::vector<core::Raster>>& fake, const FeatureExtractor& extractor,
                      const core::Schema& schema);

struct EvalConfig {
  int n_per_category = 100;
  std::uint64_t seed = 0;
  std::vector<int> categories;  // empty: every category with test samples
};

EvalReport evaluate(const chain::ModelBundle& models, const std::vector<core::ObjectSample>& test,
                    const core::Schema& schema, const FeatureExtractor& extractor, const EvalConfig& config);

// <stem>.json and <stem>.csv
void write_report(const std::filesystem::path& stem, const EvalReport& report);

// Real images of the test samples, grouped by category.
std::map<int, std::vector<core::Raster>> real_images(const std::vector<core::ObjectSample>& test, int size);

}  // namespace mero::eval

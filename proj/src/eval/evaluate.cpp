#include "mero/eval/evaluate.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mero/core/png_io.hpp"
#include "mero/error.hpp"
#include "mero/eval/fid.hpp"

namespace mero::eval {

namespace {

core::Raster resized(const core::Raster& img, int size) {
  if (img.width == size && img.height == size) return img;
  core::Raster out(size, size, img.channels);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) = img.at(std::min(img.height - 1, y * img.height / size),
                                 std::min(img.width - 1, x * img.width / size), c);
  return out;
}

}  // namespace

EvalSet generate_eval_set(const chain::ModelBundle& models, const std::vector<core::ObjectSample>& test,
                          int n_per_category, std::uint64_t seed, const std::vector<int>& categories) {
  MERO_CHECK(n_per_category >= 0, "generate_eval_set: n must not be negative");
  std::map<int, std::vector<std::vector<std::uint8_t>>> part_lists;
  for (const auto& s : test) part_lists[s.category()].push_back(s.graph.presence);
  EvalSet out;
  for (int c : categories) {
    const auto it = part_lists.find(c);
    if (it == part_lists.end()) {
      spdlog::warn("category {} has no test samples; skipped", c);
      continue;
    }
    auto& objects = out[c];
    const std::uint64_t cat_seed = nn::mix_seed(seed, static_cast<std::uint64_t>(c));
    for (int i = 0; i < n_per_category; ++i) {
      const std::uint64_t s = nn::mix_seed(cat_seed, static_cast<std::uint64_t>(i));
      nn::Rng pick(s);
      const auto& lists = it->second;
      const auto& part_list = lists[pick.uniform_int(0, static_cast<int>(lists.size()) - 1)];
      objects.push_back(chain::generate_object(models, c, part_list, nn::mix_seed(s, 1)));
    }
  }
  return out;
}

std::map<int, std::vector<core::Raster>> real_images(const std::vector<core::ObjectSample>& test, int size) {
  std::map<int, std::vector<core::Raster>> out;
  for (const auto& s : test) {
    if (!s.image) throw ValidationError("evaluation: test sample " + s.id + " has no image");
    out[s.category()].push_back(resized(*s.image, size));
  }
  return out;
}

EvalReport score_sets(const std::map<int, std::vector<core::Raster>>& real,
                      const std::map<int, std::vector<core::Raster>>& fake, const FeatureExtractor& extractor,
                      const core::Schema& schema) {
  EvalReport report;
  report.extractor_id = extractor.id();
  for (const auto& [c, fakes] : fake) {
    const auto r = real.find(c);
    if (r == real.end()) {
      spdlog::warn("no real images for category {}; skipped", c);
      continue;
    }
    if (r->second.size() < 2 || fakes.size() < 2) {
      spdlog::warn("category {} has fewer than two images on one side; skipped", schema.category(c).name);
      continue;
    }
    const Moments mr = moments_of(extractor.extract(r->second));
    const Moments mf = moments_of(extractor.extract(fakes));
    CategoryScore s;
    s.category = c;
    s.name = schema.category(c).name;
    s.fid = frechet_distance(mr, mf);
    s.real_count = mr.count;
    s.fake_count = mf.count;
    s.shrunk = mr.shrunk || mf.shrunk;
    report.categories.push_back(std::move(s));
  }
  std::sort(report.categories.begin(), report.categories.end(),
            [](const CategoryScore& a, const CategoryScore& b) { return a.name < b.name; });
  double sum = 0.0;
  for (const auto& s : report.categories) sum += s.fid;
  report.overall = report.categories.empty() ? 0.0 : sum / static_cast<double>(report.categories.size());
  return report;
}

EvalReport evaluate(const chain::ModelBundle& models, const std::vector<core::ObjectSample>& test,
                    const core::Schema& schema, const FeatureExtractor& extractor, const EvalConfig& config) {
  std::vector<int> categories = config.categories;
  if (categories.empty()) {
    for (const auto& s : test) categories.push_back(s.category());
    std::sort(categories.begin(), categories.end());
    categories.erase(std::unique(categories.begin(), categories.end()), categories.end());
  }
  const EvalSet generated = generate_eval_set(models, test, config.n_per_category, config.seed, categories);
  std::map<int, std::vector<core::Raster>> fake;
  for (const auto& [c, objects] : generated)
    for (const auto& o : objects) fake[c].push_back(o.sprite);
  EvalReport report = score_sets(real_images(test, models.canvas()), fake, extractor, schema);
  report.seed = config.seed;
  report.n_per_category = config.n_per_category;
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& s : categories)
    cats.push_back({{"category", s.name},
                    {"fid", s.fid},
                    {"real_count", s.real_count},
                    {"fake_count", s.fake_count},
                    {"shrinkage", s.shrunk}});
  return {{"model", model},       {"extractor", extractor_id}, {"seed", seed},
          {"n_per_category", n_per_category}, {"overall", overall}, {"categories", cats}};
}

std::string EvalReport::to_csv() const {
  std::ostringstream head, row;
  head << "model,overall";
  row.precision(10);
  row << model << ',' << overall;
  for (const auto& s : categories) {
    head << ',' << s.name;
    row << ',' << s.fid;
  }
  return head.str() + "\n" + row.str() + "\n";
}

void write_report(const std::filesystem::path& stem, const EvalReport& report) {
  auto json_path = stem, csv_path = stem;
  json_path += ".json";
  csv_path += ".csv";
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  core::write_file(json_path, report.to_json().dump(2) + "\n");
  core::write_file(csv_path, report.to_csv());
}

}  // namespace mero::eval

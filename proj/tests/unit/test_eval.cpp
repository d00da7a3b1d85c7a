#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "mero/core/png_io.hpp"
#include "mero/core/procedural.hpp"
#include "mero/error.hpp"
#include "mero/eval/evaluate.hpp"
#include "mero/eval/fid.hpp"
#include "mero/nn/checkpoint.hpp"
#include "support/tiny_models.hpp"

using namespace mero;
using namespace mero::eval;
using mero::testing::corpus_with;
using mero::testing::tiny_bundle;

namespace {

Moments diag_moments(std::vector<double> mean, std::vector<double> var) {
  Moments m;
  const int d = static_cast<int>(mean.size());
  m.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), d);
  m.cov = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) m.cov(i, i) = var[i];
  m.count = 1000;
  return m;
}

Eigen::MatrixXd gaussian(int n, int d, std::uint64_t seed, double shift = 0.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = normal(gen) + shift;
  return x;
}

class LayerHolder : public nn::Module {
 public:
  std::vector<std::pair<nn::Var, nn::Var>> layers;
  void visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) override {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      fn(nn::join_name(prefix, "layer" + std::to_string(i) + ".weight"), layers[i].first);
      fn(nn::join_name(prefix, "layer" + std::to_string(i) + ".bias"), layers[i].second);
    }
  }
};

}  // namespace

TEST_CASE("frechet distance closed forms") {
  CHECK(std::abs(frechet_distance(diag_moments({0, 0, 0, 0}, {1, 1, 1, 1}), diag_moments({1, 1, 1, 1}, {1, 1, 1, 1})) -
                 4.0) < 1e-9);
  CHECK(std::abs(frechet_distance(diag_moments({0}, {1}), diag_moments({0}, {4})) - 1.0) < 1e-9);
  // Diagonal Gaussians in general: sum (mu_i - nu_i)^2 + (s_i - t_i)^2 with s, t standard deviations.
  nn::Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> m1, m2, v1, v2;
    double expected = 0;
    for (int i = 0; i < 5; ++i) {
      m1.push_back(rng.uniform(-2, 2)), m2.push_back(rng.uniform(-2, 2));
      v1.push_back(rng.uniform(0.1, 3)), v2.push_back(rng.uniform(0.1, 3));
      expected += std::pow(m1[i] - m2[i], 2) + std::pow(std::sqrt(v1[i]) - std::sqrt(v2[i]), 2);
    }
    CHECK(std::abs(frechet_distance(diag_moments(m1, v1), diag_moments(m2, v2)) - expected) < 1e-9);
  }
}

TEST_CASE("frechet distance properties on sampled features") {
  const FeatureSet a{gaussian(300, 6, 1), "x"};
  const FeatureSet b{gaussian(200, 6, 2, 0.3), "x"};
  CHECK(std::abs(frechet_distance(a, a)) < 1e-6);
  CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-6);
  CHECK(frechet_distance(a, b) >= 0.0);
  const FeatureSet big1{gaussian(10000, 4, 11), "x"}, big2{gaussian(10000, 4, 12), "x"};
  CHECK(frechet_distance(big1, big2) < 0.05);
  CHECK_THROWS_AS(frechet_distance(a, FeatureSet{b.features, "y"}), ValidationError);
}

TEST_CASE("moments") {
  const Eigen::MatrixXd x = gaussian(500, 3, 5, 1e6);  // large offset stresses the summation
  const Moments m = moments_of(x);
  Eigen::MatrixXd reversed = x.colwise().reverse();
  const Moments r = moments_of(reversed);
  CHECK((m.mean - r.mean).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((m.cov - r.cov).cwiseAbs().maxCoeff() < 1e-9);
  // Direct two-pass oracle.
  const Eigen::VectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = centred.transpose() * centred / 499.0;
  CHECK((m.cov - cov).cwiseAbs().maxCoeff() < 1e-8);
  CHECK_FALSE(m.shrunk);
  CHECK(moments_of(gaussian(3, 4, 1)).shrunk);
  CHECK_THROWS_AS(moments_of(gaussian(1, 4, 1)), ValidationError);
  Eigen::MatrixXd bad = gaussian(5, 2, 1);
  bad(2, 1) = std::nan("");
  CHECK_THROWS_AS(moments_of(bad), ValidationError);
}

TEST_CASE("feature extractors") {
  const auto ex = make_test_extractor(7, 16);
  const auto corpus = corpus_with(2, 3);
  std::vector<core::Raster> imgs;
  for (const auto& s : corpus.samples) imgs.push_back(*s.image);
  const Eigen::MatrixXd f = ex->extract(imgs);
  CHECK(f.rows() == 6);
  CHECK(f.cols() == ex->dim());
  CHECK(f == make_test_extractor(7, 16)->extract(imgs));
  CHECK(make_test_extractor(8, 16)->id() != ex->id());

  // Checkpoint-loaded extractor with the same weights gives the same features.
  nn::Rng rng(1);
  LayerHolder holder;
  holder.layers.push_back({nn::make_parameter(rng.normal_tensor({4, 3, 3, 3})), nn::make_parameter(nn::Tensor({4}))});
  const auto path = std::filesystem::temp_directory_path() / "mero_extractor.ckpt";
  nn::save_checkpoint(path, "feature_extractor", {{"input_size", 16}, {"strides", {2}}, {"id", "conv-a"}}, holder);
  const auto loaded = load_extractor(path);
  CHECK(loaded->id() == "conv-a");
  const ConvFeatureExtractor direct("conv-a", {{holder.layers[0].first.value(), nn::Tensor({4}), 2}}, 16);
  CHECK(loaded->extract(imgs) == direct.extract(imgs));
  nn::save_checkpoint(path, "box_gcn_vae", {}, holder);
  CHECK_THROWS_AS(load_extractor(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("generation protocol and report") {
  SUBCASE("100 per category over 10 categories gives 1000 images") {
    const auto corpus = corpus_with(10, 2);
    const auto bundle = tiny_bundle(corpus.schema, 1);
    std::vector<int> cats(10);
    for (int c = 0; c < 10; ++c) cats[c] = c;
    const EvalSet set = generate_eval_set(bundle, corpus.samples, 100, 4, cats);
    std::size_t total = 0;
    for (const auto& [c, objects] : set) {
      total += objects.size();
      for (const auto& o : objects) {
        CHECK(o.category == c);
        bool from_test = false;
        for (const auto& s : corpus.samples)
          from_test = from_test || (s.category() == c && s.graph.presence == o.part_list);
        CHECK(from_test);
      }
    }
    CHECK(total == 1000);
  }
  const auto corpus = corpus_with(3, 4);
  const auto bundle = tiny_bundle(corpus.schema, 2);
  const auto ex = make_test_extractor(7, 16);
  SUBCASE("same seed gives identical sprites, different seed does not") {
    const EvalSet a = generate_eval_set(bundle, corpus.samples, 5, 10, {0, 1, 2});
    const EvalSet b = generate_eval_set(bundle, corpus.samples, 5, 10, {0, 1, 2});
    const EvalSet c = generate_eval_set(bundle, corpus.samples, 5, 11, {0, 1, 2});
    bool any_diff = false;
    for (int k = 0; k < 3; ++k)
      for (int i = 0; i < 5; ++i) {
        CHECK(core::encode_png(a.at(k)[i].sprite) == core::encode_png(b.at(k)[i].sprite));
        CHECK(a.at(k)[i].seed == b.at(k)[i].seed);
        any_diff = any_diff || a.at(k)[i].seed != c.at(k)[i].seed;
      }
    CHECK(any_diff);
  }
  SUBCASE("n = 0 gives an empty set and a valid skeleton report") {
    EvalConfig cfg;
    cfg.n_per_category = 0;
    const EvalReport r = evaluate(bundle, corpus.samples, corpus.schema, *ex, cfg);
    CHECK(r.categories.empty());
    CHECK(r.overall == 0.0);
    CHECK(r.to_json()["extractor"] == ex->id());
    CHECK(r.to_csv() == "model,overall\nmero,0\n");
  }
  SUBCASE("real against itself scores zero, overall is the category mean") {
    const auto real = real_images(corpus.samples, 16);
    const EvalReport self = score_sets(real, real, *ex, corpus.schema);
    REQUIRE(self.categories.size() == 3);
    for (const auto& s : self.categories) CHECK(std::abs(s.fid) < 1e-6);

    EvalConfig cfg;
    cfg.n_per_category = 6;
    cfg.seed = 3;
    const EvalReport r = evaluate(bundle, corpus.samples, corpus.schema, *ex, cfg);
    REQUIRE(r.categories.size() == 3);
    double mean = 0;
    for (const auto& s : r.categories) mean += s.fid / 3.0;
    CHECK(r.overall == doctest::Approx(mean).epsilon(1e-12));
    CHECK(r.categories[0].name < r.categories[1].name);
    CHECK(r.categories[0].shrunk);  // 4 real images against 16 features

    const auto stem = std::filesystem::temp_directory_path() / "mero_eval" / "report";
    write_report(stem, r);
    const auto back = nlohmann::json::parse(core::read_file(stem.string() + ".json"));
    CHECK(back["overall"] == r.overall);
    const std::string csv = core::read_file(stem.string() + ".csv");
    CHECK(csv.rfind("model,overall," + r.categories[0].name, 0) == 0);
    std::filesystem::remove_all(stem.parent_path());
  }
}

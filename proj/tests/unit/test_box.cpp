#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "mero/box/model.hpp"
#include "mero/core/procedural.hpp"
#include "mero/error.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace mero;
using namespace mero::box;
using nn::Tensor;
using nn::Var;

namespace {

BoxVaeConfig small_config(int p, int categories) {
  BoxVaeConfig c;
  c.p = p;
  c.categories = categories;
  c.gcn_widths = {8, 8};
  c.readout = 12;
  c.latent = 4;
  c.hidden = 16;
  c.slot_masks.assign(static_cast<std::size_t>(categories), std::vector<std::uint8_t>(p, 1));
  return c;
}

core::ProceduralCorpus toy_corpus(int per_category, std::uint64_t seed, double drop = 0.3) {
  core::ProceduralSpec spec;
  spec.categories = {{"owl", 4, core::Topology::star, per_category}, {"eel", 3, core::Topology::chain, per_category}};
  spec.images = false;
  spec.mask_resolution = 4;
  spec.drop_probability = drop;
  nn::Rng rng(seed);
  return core::make_procedural_corpus(spec, rng);
}

Tensor t2(int r, int c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

}  // namespace

TEST_CASE("gcn_layer worked examples") {
  SUBCASE("single node reduces to relu(xW)") {
    const Tensor x({1, 5}, {1, -2, 3, 0, 0});
    Tensor eye({5, 5});
    for (int i = 0; i < 5; ++i) eye.at(i, i) = 1;
    const Var out = gcn_layer(nn::constant(x), normalized_adjacency(Tensor({1, 1})), nn::constant(eye));
    CHECK(out.value() == Tensor({1, 5}, {1, 0, 3, 0, 0}));
  }
  SUBCASE("three-node path with all-ones features") {
    const Tensor a = t2(3, 3, {0, 1, 0, 1, 0, 1, 0, 1, 0});
    const Tensor ones({3, 2}, 1.0);
    const Tensor eye = t2(2, 2, {1, 0, 0, 1});
    const Var out = gcn_layer(nn::constant(ones), normalized_adjacency(a), nn::constant(eye));
    // Degrees with self loops: 2, 3, 2.
    const double end = 0.5 + 1.0 / std::sqrt(6.0);
    const double mid = 2.0 / std::sqrt(6.0) + 1.0 / 3.0;
    for (int j = 0; j < 2; ++j) {
      CHECK(std::abs(out.value().at(0, j) - end) < 1e-12);
      CHECK(std::abs(out.value().at(1, j) - mid) < 1e-12);
      CHECK(std::abs(out.value().at(2, j) - end) < 1e-12);
    }
  }
  SUBCASE("no edges leaves self loops only") {
    nn::Rng rng(2);
    const Tensor h = rng.uniform_tensor({4, 3}, -1, 1);
    const Tensor eye = t2(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Var out = gcn_layer(nn::constant(h), normalized_adjacency(Tensor({4, 4})), nn::constant(eye));
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(out.value()[i] == std::max(0.0, h[i]));
  }
}

TEST_CASE("gcn_layer equals the dense formula on random graphs") {
  nn::Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const int p = rng.uniform_int(1, 8), f = rng.uniform_int(1, 6), g = rng.uniform_int(1, 6);
    Tensor a({p, p});
    for (int i = 0; i < p; ++i)
      for (int j = i + 1; j < p; ++j)
        if (rng.bernoulli(0.4)) a.at(i, j) = a.at(j, i) = 1;
    const Tensor h = rng.uniform_tensor({p, f}, -1, 1), w = rng.uniform_tensor({f, g}, -1, 1);
    const Tensor got = gcn_layer(nn::constant(h), normalized_adjacency(a), nn::constant(w)).value();
    const Eigen::MatrixXd want = testing::dense_gcn(testing::to_eigen(a), testing::to_eigen(h), testing::to_eigen(w));
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < g; ++j) CHECK(std::abs(got.at(i, j) - want(i, j)) <= 1e-6);
  }
}

TEST_CASE("encoder behaviour") {
  const auto corpus = toy_corpus(3, 1);
  nn::Rng rng(4);
  BoxGcnVae model(BoxVaeConfig::for_schema(corpus.schema), rng);
  std::vector<const core::ObjectSample*> ptrs;
  for (const auto& s : corpus.samples) ptrs.push_back(&s);
  const BoxBatch batch = make_box_batch(ptrs, model.config());

  SUBCASE("deterministic") {
    const auto a = model.encode(batch.x, batch.adjacency, batch.category);
    const auto b = model.encode(batch.x, batch.adjacency, batch.category);
    CHECK(a.mu.value() == b.mu.value());
    CHECK(a.log_var.value() == b.log_var.value());
  }
  SUBCASE("all-absent graph gives finite output") {
    const Tensor x({1, model.config().p, 5}), a({1, model.config().p, model.config().p});
    const auto post = model.encode(x, a, one_hot({0}, 2));
    CHECK(nn::all_finite(post.mu.value()));
    CHECK(nn::all_finite(post.log_var.value()));
  }
  SUBCASE("swapping two absent rows leaves the posterior unchanged") {
    core::PartGraph g(model.config().p, 1);  // eel owns slots 0..2; slot 3 unused
    g.presence[0] = 1;
    g.boxes[0] = core::Box{0.2, 0.2, 0.8, 0.8};
    core::ObjectSample s;
    s.graph = g;
    const auto b1 = make_box_batch({&s}, model.config());
    BoxBatch b2 = b1;
    // Rows 2 and 3 are absent (all zero); exchange them explicitly.
    for (int k = 0; k < 5; ++k) std::swap(b2.x[2 * 5 + k], b2.x[3 * 5 + k]);
    const auto p1 = model.encode(b1.x, b1.adjacency, b1.category);
    const auto p2 = model.encode(b2.x, b2.adjacency, b2.category);
    CHECK(p1.mu.value() == p2.mu.value());
  }
  SUBCASE("out-of-range category is rejected") {
    CHECK_THROWS_AS(one_hot({2}, 2), ValidationError);
  }
}

TEST_CASE("reparameterize") {
  const Tensor mu({1, 3}, {0.5, -1.0, 2.0});
  SUBCASE("minimum variance collapses to mu") {
    Posterior post{nn::constant(mu), nn::constant(Tensor({1, 3}, -10.0))};
    const Var z = reparameterize(post, Tensor({1, 3}, {1.0, -1.0, 0.5}));
    for (int i = 0; i < 3; ++i) CHECK(std::abs(z.value()[i] - mu[i]) < 0.01);
  }
  SUBCASE("standard posterior passes the noise through") {
    Posterior post{nn::constant(Tensor({1, 3})), nn::constant(Tensor({1, 3}))};
    const Tensor n({1, 3}, {0.3, -0.7, 1.1});
    CHECK(reparameterize(post, n).value() == n);
  }
  SUBCASE("Monte-Carlo moments") {
    const int draws = 10000;
    Posterior post{nn::constant(Tensor({draws, 1}, 1.5)), nn::constant(Tensor({draws, 1}, std::log(0.25)))};
    nn::Rng rng(12);
    const Tensor z = reparameterize(post, rng.normal_tensor({draws, 1})).value();
    double mean = 0, var = 0;
    for (double v : z.storage()) mean += v;
    mean /= draws;
    for (double v : z.storage()) var += (v - mean) * (v - mean);
    var /= draws - 1;
    CHECK(std::abs(mean - 1.5) < 0.05 * 1.5);
    CHECK(std::abs(var - 0.25) < 0.05 * 0.25);
  }
}

TEST_CASE("loss unit values") {
  SUBCASE("presence") {
    CHECK(loss_presence(nn::constant(Tensor({1, 4}, 0.5)), Tensor({1, 4}, {1, 0, 1, 1})).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(loss_presence(nn::constant(t2(1, 2, {0.9, 0.2})), t2(1, 2, {1, 0})).item() ==
          doctest::Approx(-(std::log(0.9) + std::log(0.8)) / 2).epsilon(1e-12));
    CHECK(loss_presence(nn::constant(t2(1, 2, {1, 0})), t2(1, 2, {1, 0})).item() < 1e-6);
  }
  SUBCASE("box") {
    const Tensor gt({1, 1, 4}, {0, 0, 1, 1});
    CHECK(loss_box(nn::constant(gt), gt, Tensor({1, 1}, 1.0)).item() == 0.0);
    const Var half = nn::constant(Tensor({1, 1, 4}, {0, 0, 0.5, 1}));
    CHECK(std::abs(iou_term(half, gt).item() - std::log(2.0)) < 1e-9);
    // MSE of the half box is 0.25 / 4 on one coordinate.
    CHECK(loss_box(half, gt, Tensor({1, 1}, 1.0)).item() == doctest::Approx(0.0625 + std::log(2.0)).epsilon(1e-12));
    const Var far = nn::constant(Tensor({1, 1, 4}, {2, 2, 3, 3}));
    CHECK(std::abs(iou_term(far, gt).item() + std::log(1e-6)) < 1e-9);
  }
  SUBCASE("adjacency") {
    CHECK(loss_adjacency(nn::constant(Tensor({1, 2, 2}, 0.5)), Tensor({1, 2, 2}, {0, 1, 1, 0})).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(loss_adjacency(nn::constant(Tensor({1, 2, 2}, {.1, .9, .9, .1})), Tensor({1, 2, 2}, {0, 1, 1, 0})).item() ==
          doctest::Approx(-std::log(0.9)).epsilon(1e-12));
  }
  SUBCASE("kl") {
    auto kl = [](double mu, double log_var) {
      return kl_diag_gaussian({nn::constant(Tensor({1, 1}, mu)), nn::constant(Tensor({1, 1}, log_var))}).item();
    };
    CHECK(kl(0, 0) == 0.0);
    CHECK(std::abs(kl(1, 0) - 0.5) < 1e-12);
    CHECK(std::abs(kl(0, std::log(4.0)) - 0.5 * (4 - 1 - std::log(4.0))) < 1e-12);
  }
}

TEST_CASE("loss properties") {
  nn::Rng rng(9);
  const int b = 3, p = 5;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor gt({b, p, 4}), pred({b, p, 4}), present({b, p}), adj({b, p, p});
    for (int i = 0; i < b * p; ++i) {
      const double x0 = rng.uniform(0, 0.6), y0 = rng.uniform(0, 0.6);
      const double vals[4] = {x0, y0, x0 + rng.uniform(0.05, 0.4), y0 + rng.uniform(0.05, 0.4)};
      for (int k = 0; k < 4; ++k) gt[i * 4 + k] = vals[k], pred[i * 4 + k] = std::clamp(vals[k] + rng.uniform(-0.1, 0.1), 0.0, 1.0);
      present[i] = rng.bernoulli(0.7);
    }
    for (std::size_t i = 0; i < adj.size(); ++i) adj[i] = rng.bernoulli(0.3);
    const Tensor probs = rng.uniform_tensor({b, p}, 0.01, 0.99);
    const Tensor aprobs = rng.uniform_tensor({b, p, p}, 0.01, 0.99);

    CHECK(loss_box(nn::constant(pred), gt, present).item() >= 0.0);
    CHECK(loss_box(nn::constant(gt), gt, present).item() == 0.0);
    CHECK(loss_presence(nn::constant(probs), present).item() >= 0.0);
    CHECK(loss_adjacency(nn::constant(aprobs), adj).item() >= 0.0);

    // Consistent slot permutation applied to prediction and target.
    std::vector<int> perm(p);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Tensor gt2 = gt, pred2 = pred, present2 = present, probs2 = probs, adj2 = adj, aprobs2 = aprobs;
    for (int i = 0; i < b; ++i)
      for (int s = 0; s < p; ++s) {
        const int d = perm[s];
        for (int k = 0; k < 4; ++k) {
          gt2[(i * p + d) * 4 + k] = gt[(i * p + s) * 4 + k];
          pred2[(i * p + d) * 4 + k] = pred[(i * p + s) * 4 + k];
        }
        present2[i * p + d] = present[i * p + s];
        probs2[i * p + d] = probs[i * p + s];
        for (int t = 0; t < p; ++t) {
          adj2[(i * p + d) * p + perm[t]] = adj[(i * p + s) * p + t];
          aprobs2[(i * p + d) * p + perm[t]] = aprobs[(i * p + s) * p + t];
        }
      }
    CHECK(loss_box(nn::constant(pred2), gt2, present2).item() ==
          doctest::Approx(loss_box(nn::constant(pred), gt, present).item()).epsilon(1e-12));
    CHECK(loss_presence(nn::constant(probs2), present2).item() ==
          doctest::Approx(loss_presence(nn::constant(probs), present).item()).epsilon(1e-12));
    CHECK(loss_adjacency(nn::constant(aprobs2), adj2).item() ==
          doctest::Approx(loss_adjacency(nn::constant(aprobs), adj).item()).epsilon(1e-12));
  }
}

TEST_CASE("total objective gradient matches finite differences") {
  const auto corpus = toy_corpus(2, 3, 0.2);
  nn::Rng rng(10);
  BoxGcnVae model(small_config(corpus.schema.p, 2), rng);
  std::vector<const core::ObjectSample*> ptrs;
  for (const auto& s : corpus.samples) ptrs.push_back(&s);
  const BoxBatch batch = make_box_batch(ptrs, model.config());
  const Tensor noise = rng.normal_tensor({batch.size(), model.config().latent});
  auto objective = [&] { return box_objective(model, batch, 0.7, noise).total; };
  const auto r = testing::check_gradients(objective, model.named_parameters());
  INFO(r.worst_name);
  CHECK(r.worst_relative < 1e-3);
}

TEST_CASE("decoder output ranges, conditioning checks and lambda = 0") {
  const auto corpus = toy_corpus(3, 5);
  nn::Rng rng(6);
  BoxGcnVae model(BoxVaeConfig::for_schema(corpus.schema), rng);
  std::vector<const core::ObjectSample*> ptrs;
  for (const auto& s : corpus.samples) ptrs.push_back(&s);
  const BoxBatch batch = make_box_batch(ptrs, model.config());
  const Tensor noise = rng.normal_tensor({batch.size(), model.config().latent});
  const auto out = model.decode(nn::constant(noise), batch.category, batch.presence);
  for (double v : out.presence.value().storage()) CHECK((v > 0.0 && v < 1.0));
  for (double v : out.adjacency.value().storage()) CHECK((v > 0.0 && v < 1.0));
  for (double v : out.boxes.value().storage()) CHECK((v >= 0.0 && v <= 1.0));
  const auto& adj = out.adjacency.value();
  const int p = model.config().p;
  for (int i = 0; i < batch.size(); ++i)
    for (int s = 0; s < p; ++s)
      for (int t = 0; t < p; ++t)
        CHECK(adj[(i * p + s) * p + t] == adj[(i * p + t) * p + s]);

  // The eel category owns three slots; asking for slot 3 is rejected.
  Tensor parts({1, p});
  parts[3] = 1;
  CHECK_THROWS_AS(model.decode(nn::constant(Tensor({1, model.config().latent})), one_hot({1}, 2), parts),
                  ValidationError);

  const auto l0 = box_objective(model, batch, 0.0, noise);
  CHECK(l0.total.item() == l0.reconstruction.item());
  const auto l1 = box_objective(model, batch, 0.5, noise);
  CHECK(l1.total.item() == doctest::Approx(l1.reconstruction.item() + 0.5 * l1.kl.item()).epsilon(1e-12));
}

TEST_CASE("sample_layout") {
  const auto corpus = toy_corpus(2, 7);
  nn::Rng init(3);
  BoxGcnVae model(BoxVaeConfig::for_schema(corpus.schema), init);
  const std::vector<std::uint8_t> parts{1, 1, 0, 1};
  nn::Rng r0(1);
  CHECK_THROWS_AS(sample_layout(model, 0, parts, r0), ValidationError);
  model.set_ready(true);
  nn::Rng a(5), b(5);
  const auto g1 = sample_layout(model, 0, parts, a);
  const auto g2 = sample_layout(model, 0, parts, b);
  CHECK(g1 == g2);
  CHECK_NOTHROW(g1.validate());
  for (int s = 0; s < g1.p; ++s)
    if (g1.presence[s]) CHECK(parts[s] == 1);
}

TEST_CASE("box checkpoint round trip") {
  const auto corpus = toy_corpus(1, 8);
  nn::Rng rng(3);
  BoxGcnVae model(BoxVaeConfig::for_schema(corpus.schema), rng);
  const auto path = std::filesystem::temp_directory_path() / "mero_box_test.ckpt";
  save_box_model(path, model);
  BoxGcnVae back = load_box_model(path);
  CHECK(back.ready());
  CHECK(back.config().to_json() == model.config().to_json());
  auto pa = model.named_parameters(), pb = back.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second.value() == pb[i].second.value());
  std::filesystem::remove(path);
}

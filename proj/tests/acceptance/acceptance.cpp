// Acceptance run: one PASS/FAIL line per primary criterion. The desk-scale
// stages are trained through the `mero` CLI, then checked against
// independent computations here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include <nlohmann/json.hpp>

#include "mero/box/losses.hpp"
#include "mero/box/model.hpp"
#include "mero/chain.hpp"
#include "mero/core/dataset.hpp"
#include "mero/core/png_io.hpp"
#include "mero/core/procedural.hpp"
#include "mero/eval/evaluate.hpp"
#include "mero/eval/fid.hpp"
#include "mero/mask/model.hpp"
#include "mero/train/config.hpp"
#include "mero/translate/model.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace mero;
using nn::Tensor;
using nn::Var;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double limit_seconds;  // 0: no runtime bound
  std::function<Outcome()> run;
};

std::string fixed(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

const fs::path kWork = fs::path(MERO_ACCEPTANCE_WORKDIR);
const fs::path kData = kWork / "data";
const fs::path kModels = kWork / "models";
const fs::path kConfigs = fs::path(MERO_SOURCE_DIR) / "configs" / "desk";

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MERO_CLI + "\" -q " + args;
  return std::system(cmd.c_str());
}

bool train_stage_cli(const std::string& stage, std::string& detail) {
  const int rc = run_cli("train --stage " + stage + " --config \"" + (kConfigs / (stage + ".json")).string() +
                         "\" --data \"" + kData.string() + "\" --out \"" + kModels.string() + "\"");
  if (rc != 0) detail = "mero train --stage " + stage + " exited with " + std::to_string(rc);
  return rc == 0;
}

core::Dataset& desk_dataset() {
  static core::Dataset d = core::load_dataset(kData, kData / "schema.json");
  return d;
}

std::vector<const core::ObjectSample*> pointers(const std::vector<core::ObjectSample>& v) {
  std::vector<const core::ObjectSample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

// ---------------------------------------------------------------------------

Outcome gcn_oracle() {
  nn::Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int p = rng.uniform_int(1, 8), f = rng.uniform_int(1, 8), g = rng.uniform_int(1, 8);
    Tensor a({p, p});
    for (int i = 0; i < p; ++i)
      for (int j = i + 1; j < p; ++j)
        if (rng.bernoulli(0.4)) a.at(i, j) = a.at(j, i) = 1;
    const Tensor h = rng.uniform_tensor({p, f}, -1, 1), w = rng.uniform_tensor({f, g}, -1, 1);
    const Tensor got = box::gcn_layer(nn::constant(h), box::normalized_adjacency(a), nn::constant(w)).value();
    const Eigen::MatrixXd want = testing::dense_gcn(testing::to_eigen(a), testing::to_eigen(h), testing::to_eigen(w));
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < g; ++j) worst = std::max(worst, std::abs(got.at(i, j) - want(i, j)));
  }
  return {worst <= 1e-6, "100 graphs, max |diff| " + fixed("%.2e", worst) + " (tol 1e-6)"};
}

Outcome gradient_checks() {
  // BoxGCN-VAE, p = 4
  core::ProceduralSpec spec;
  spec.categories = {{"owl", 4, core::Topology::star, 2}, {"eel", 3, core::Topology::chain, 2}};
  spec.images = false;
  spec.mask_resolution = 4;
  spec.drop_probability = 0.2;
  nn::Rng data_rng(3);
  const auto corpus = core::make_procedural_corpus(spec, data_rng);
  box::BoxVaeConfig bc;
  bc.p = corpus.schema.p, bc.categories = 2;
  bc.gcn_widths = {8, 8}, bc.readout = 12, bc.latent = 4, bc.hidden = 16;
  bc.slot_masks.assign(2, std::vector<std::uint8_t>(bc.p, 1));
  nn::Rng rng(10);
  box::BoxGcnVae bm(bc, rng);
  const auto bb = box::make_box_batch(pointers(corpus.samples), bc);
  const Tensor bnoise = rng.normal_tensor({bb.size(), bc.latent});
  const auto rb = testing::check_gradients([&] { return box::box_objective(bm, bb, 0.7, bnoise).total; },
                                           bm.named_parameters());

  // LabelMap-VAE, p = 3 with 16 x 16 masks
  core::ProceduralSpec mspec;
  mspec.categories = {{"owl", 3, core::Topology::star, 2}, {"eel", 2, core::Topology::chain, 2}};
  mspec.images = false;
  mspec.mask_resolution = 16;
  mspec.drop_probability = 0.3;
  nn::Rng mdata(4);
  const auto mcorpus = core::make_procedural_corpus(mspec, mdata);
  mask::MaskVaeConfig mc;
  mc.p = mcorpus.schema.p, mc.categories = 2, mc.mask_resolution = 16;
  mc.sequence_hidden = 6, mc.box_hidden = 4, mc.latent = 4, mc.channels = {3, 4, 4};
  mask::LabelMapVae mm(mc, rng);
  const auto mb = mask::make_mask_batch(pointers(mcorpus.samples), mc);
  const Tensor mnoise = rng.normal_tensor({mb.size(), mc.latent});
  const auto rm = testing::check_gradients([&] { return mask::mask_objective(mm, mb, 0.5, mnoise).total; },
                                           mm.named_parameters(), 1e-4, 40);
  const bool ok = bc.p == 4 && mc.p == 3 && rb.worst_relative < 1e-3 && rm.worst_relative < 1e-3;
  return {ok, "box p=" + std::to_string(bc.p) + " rel " + fixed("%.2e", rb.worst_relative) + ", labelmap p=" +
                  std::to_string(mc.p) + " 16x16 rel " + fixed("%.2e", rm.worst_relative) + " (tol 1e-3)"};
}

Outcome loss_unit_values() {
  const double ln2 = std::log(2.0);
  const double presence = box::loss_presence(nn::constant(Tensor({2, 3}, 0.5)), Tensor({2, 3}, {1, 0, 1, 0, 0, 1})).item();
  const double iou = box::iou_term(nn::constant(Tensor({1, 1, 4}, {0, 0, 0.5, 1})), Tensor({1, 1, 4}, {0, 0, 1, 1})).item();
  const double kl = box::kl_diag_gaussian({nn::constant(Tensor({1, 1}, 1.0)), nn::constant(Tensor({1, 1}, 0.0))}).item();
  const double hinge =
      translate::loss_discriminator({nn::constant(Tensor({1, 1, 2, 2}, 3.0))}, {nn::constant(Tensor({1, 1, 2, 2}, -2.0))})
          .item();
  const bool ok = std::abs(presence - ln2) <= 1e-9 && std::abs(iou - ln2) <= 1e-9 && std::abs(kl - 0.5) <= 1e-9 &&
                  hinge == 0.0;
  return {ok, "presence " + fixed("%.12f", presence) + ", IoU " + fixed("%.12f", iou) + ", KL " + fixed("%.12f", kl) +
                  ", hinge " + fixed("%g", hinge)};
}

Outcome fid_closed_form() {
  auto diag = [](std::vector<double> mean, std::vector<double> var) {
    eval::Moments m;
    const int d = static_cast<int>(mean.size());
    m.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), d);
    m.cov = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i) m.cov(i, i) = var[i];
    m.count = 100;
    return m;
  };
  const double shift = eval::frechet_distance(diag({0, 0, 0, 0}, {1, 1, 1, 1}), diag({1, 1, 1, 1}, {1, 1, 1, 1}));
  const double var = eval::frechet_distance(diag({0}, {1}), diag({0}, {4}));
  nn::Rng rng(5);
  Eigen::MatrixXd a(400, 8), b(300, 8);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  for (int i = 0; i < b.size(); ++i) b.data()[i] = 0.5 * rng.normal() + 0.2;
  const eval::FeatureSet fa{a, "x"}, fb{b, "x"};
  const double self = eval::frechet_distance(fa, fa);
  const double asym = std::abs(eval::frechet_distance(fa, fb) - eval::frechet_distance(fb, fa));
  const bool ok = std::abs(shift - 4.0) <= 1e-9 && std::abs(var - 1.0) <= 1e-9 && std::abs(self) <= 1e-6 && asym <= 1e-6;
  return {ok, "mean shift " + fixed("%.12f", shift) + ", variance " + fixed("%.12f", var) + ", FID(a,a) " +
                  fixed("%.1e", self) + ", |asymmetry| " + fixed("%.1e", asym)};
}

Outcome desk_corpus() {
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  const int rc = run_cli("make-corpus --out \"" + kData.string() + "\" --preset desk --seed 1");
  if (rc != 0) return {false, "mero make-corpus exited with " + std::to_string(rc)};
  return {desk_dataset().samples.size() == 8, std::to_string(desk_dataset().samples.size()) + " samples"};
}

Outcome box_overfit() {
  std::string err;
  if (!train_stage_cli("box", err)) return {false, err};
  const box::BoxGcnVae model = box::load_box_model(kModels / "box" / "best.ckpt");
  const auto& samples = desk_dataset().samples;
  const auto batch = box::make_box_batch(pointers(samples), model.config());
  const box::LayoutDecode out = box::reconstruct(model, batch);
  const int p = model.config().p;
  double iou_sum = 0.0;
  int parts = 0, correct = 0, slots = 0;
  for (int b = 0; b < batch.size(); ++b)
    for (int s = 0; s < p; ++s) {
      const bool truth = samples[b].graph.presence[s];
      correct += (out.presence.value().at(b, s) > 0.5) == truth;
      ++slots;
      if (!truth) continue;
      const double* pred = out.boxes.value().data() + (static_cast<std::size_t>(b) * p + s) * 4;
      const auto& g = samples[b].graph.boxes[s];
      const double gt[4] = {g.x0, g.y0, g.x1, g.y1};
      const double ordered[4] = {std::min(pred[0], pred[2]), std::min(pred[1], pred[3]), std::max(pred[0], pred[2]),
                                 std::max(pred[1], pred[3])};
      iou_sum += testing::box_iou(ordered, gt);
      ++parts;
    }
  const double iou = iou_sum / parts;
  return {iou >= 0.8 && correct == slots, "mean IoU " + fixed("%.3f", iou) + " (>= 0.8), presence " +
                                             std::to_string(correct) + "/" + std::to_string(slots)};
}

Outcome mask_overfit() {
  std::string err;
  if (!train_stage_cli("labelmap", err)) return {false, err};
  const mask::LabelMapVae model = mask::load_mask_model(kModels / "labelmap" / "best.ckpt");
  const auto& samples = desk_dataset().samples;
  const auto batch = mask::make_mask_batch(pointers(samples), model.config());
  const Tensor probs = mask::reconstruct_masks(model, batch);
  // Per-pixel BCE over present parts, computed here from the raw probabilities.
  const int p = model.config().p, m = model.config().mask_resolution;
  double bce = 0.0;
  long pixels = 0;
  bool one_hot = true;
  for (int b = 0; b < batch.size(); ++b) {
    for (int s = 0; s < p; ++s) {
      if (!samples[b].graph.presence[s]) continue;
      for (int i = 0; i < m * m; ++i) {
        const double q = std::clamp(probs[((static_cast<std::size_t>(b) * p + s) * m * m) + i], 1e-12, 1 - 1e-12);
        const double t = samples[b].masks[s].bits[i];
        bce -= t * std::log(q) + (1 - t) * std::log(1 - q);
        ++pixels;
      }
    }
    std::vector<core::Mask> masks = mask::binarize(probs, b);
    const auto map = mask::compose_label_map(masks, samples[b].graph.boxes, samples[b].graph.presence,
                                             samples[b].category());
    const Tensor planes = map.one_hot();
    const int hw = map.canvas.width * map.canvas.height;
    for (int i = 0; i < hw; ++i) {
      double sum = 0.0;
      for (int c = 0; c < p; ++c) sum += planes[static_cast<std::size_t>(c) * hw + i];
      // background plus part channels sum to exactly one
      one_hot = one_hot && (sum == 0.0 || sum == 1.0);
    }
  }
  bce /= static_cast<double>(pixels);
  return {bce < 0.1 && one_hot, "mean per-pixel BCE " + fixed("%.4f", bce) + " (< 0.1), label maps one-hot: " +
                                    (one_hot ? "yes" : "no")};
}

Outcome translator_overfit() {
  std::string err;
  if (!train_stage_cli("label2obj", err)) return {false, err};
  // Losses logged for every epoch must be finite.
  bool finite = true;
  int epochs = 0;
  for (const auto& line : [] {
         std::vector<std::string> lines;
         std::string text = core::read_file(kModels / "label2obj" / "metrics.jsonl");
         for (std::size_t a = 0, b; a < text.size(); a = b + 1) {
           b = text.find('\n', a);
           if (b == std::string::npos) b = text.size();
           if (b > a) lines.push_back(text.substr(a, b - a));
         }
         return lines;
       }()) {
    const auto j = nlohmann::json::parse(line);
    if (j.value("record", "") != "epoch") continue;
    ++epochs;
    for (const char* key : {"d_loss", "g_total"}) {
      const auto& v = j["train"][key];
      finite = finite && v.is_number() && std::isfinite(v.get<double>());
    }
  }
  const translate::Translator model = translate::load_translator(kModels / "label2obj" / "best.ckpt");
  // L1 on the [-1, 1] image scale the generator is trained in.
  double l1 = 0.0;
  long values = 0;
  for (const auto& s : desk_dataset().samples) {
    const core::Raster fake = translate::render_sprite(model, mask::label_map_of(s, model.config().resolution));
    const core::Raster& real = *s.image;
    for (std::size_t i = 0; i < real.data.size(); ++i) l1 += std::abs(double(fake.data[i]) - double(real.data[i]));
    values += static_cast<long>(real.data.size());
  }
  l1 = 2.0 * l1 / (255.0 * static_cast<double>(values));
  return {l1 < 0.15 && finite && epochs > 0, "mean L1 " + fixed("%.4f", l1) + " (< 0.15), GAN losses finite over " +
                                                 std::to_string(epochs) + " epochs: " + (finite ? "yes" : "no")};
}

Outcome annealing() {
  train::TrainingConfig c = train::TrainingConfig::defaults(train::Stage::box);
  c.cycle_count = 4, c.ramp_fraction = 0.5, c.lambda_max = 0.8;
  const long total = 400, cycle = 100;
  bool ok = true;
  for (int k = 0; k < 4; ++k) {
    ok = ok && train::cyclic_lambda(k * cycle, total, c) == 0.0;
    ok = ok && train::cyclic_lambda(k * cycle + 25, total, c) == 0.5 * c.lambda_max;
    for (long t = 50; t < cycle; ++t) ok = ok && train::cyclic_lambda(k * cycle + t, total, c) == c.lambda_max;
  }
  train::AnnealState s;
  s.lambda_current = 0.3;
  const auto exact = train::update_freeze(s, 0.0, 0.1, c);
  const auto past = train::update_freeze(s, 0.0, std::nextafter(0.1, 1.0), c);
  const auto recovered = train::update_freeze(past, 0.5, 0.55, c);
  const bool freeze_ok = !exact.frozen && past.frozen && !recovered.frozen && past.lambda_current == s.lambda_current;
  return {ok && freeze_ok, std::string("0 / 0.5 / 1.0 x lambda_max at cycle start / 25% / >=50%: ") +
                               (ok ? "exact" : "mismatch") + "; freeze at diff 0.1: " + (exact.frozen ? "on" : "off") +
                               ", just above: " + (past.frozen ? "on" : "off")};
}

Outcome generate_determinism() {
  std::string a = (kWork / "gen_a").string(), b = (kWork / "gen_b").string();
  for (const auto& out : {a, b}) {
    const int rc = run_cli("generate --models \"" + kModels.string() + "\" --category owl --parts torso,head,arm --seed 1 --out \"" +
                           out + "\" > /dev/null");
    if (rc != 0) return {false, "mero generate exited with " + std::to_string(rc)};
  }
  std::vector<std::string> differing;
  for (const char* f : {"boxes.json", "label_map.png", "sprite.png"})
    if (core::read_file(fs::path(a) / f) != core::read_file(fs::path(b) / f)) differing.push_back(f);
  const auto palette = core::decode_png(core::read_file(fs::path(a) / "label_map.png"), true);
  const bool indexed = palette.channels == 1;
  return {differing.empty() && indexed,
          differing.empty() ? std::string("boxes.json, label_map.png (indexed), sprite.png byte-identical")
                            : "differs: " + differing.front()};
}

Outcome evaluation_sanity() {
  const auto& data = desk_dataset();
  const chain::ModelBundle trained = chain::load_models(kModels);
  // Same architectures, fresh weights.
  nn::Rng rng(99);
  chain::ModelBundle untrained;
  auto b = std::make_shared<box::BoxGcnVae>(trained.box->config(), rng);
  auto m = std::make_shared<mask::LabelMapVae>(trained.mask->config(), rng);
  auto t = std::make_shared<translate::Translator>(trained.translator->config(), rng);
  b->set_ready(true), m->set_ready(true), t->set_ready(true);
  untrained.box = b, untrained.mask = m, untrained.translator = t;
  untrained.schema = trained.schema;

  const auto extractor = eval::make_test_extractor();
  eval::EvalConfig cfg;
  cfg.n_per_category = 16;
  cfg.seed = 5;
  const double fid_trained = eval::evaluate(trained, data.samples, data.schema, *extractor, cfg).overall;
  const double fid_untrained = eval::evaluate(untrained, data.samples, data.schema, *extractor, cfg).overall;

  const auto real = eval::real_images(data.samples, trained.canvas());
  std::map<int, std::vector<core::Raster>> subsample;
  for (const auto& [c, imgs] : real)
    for (std::size_t i = 0; i < imgs.size(); i += 2) subsample[c].push_back(imgs[i]);
  const double fid_real = eval::score_sets(real, subsample, *extractor, data.schema).overall;
  const bool ok = fid_real < fid_untrained && fid_trained < fid_untrained;
  return {ok, "FID real/subsample " + fixed("%.4g", fid_real) + ", overfit " + fixed("%.4g", fid_trained) +
                  ", untrained " + fixed("%.4g", fid_untrained)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<Criterion> criteria = {
      {"GCN oracle equivalence", 10, gcn_oracle},
      {"Gradient checks", 120, gradient_checks},
      {"Loss unit values", 0, loss_unit_values},
      {"FID closed form", 5, fid_closed_form},
      {"Desk corpus (setup)", 0, desk_corpus},
      {"Desk overfit, box stage", 600, box_overfit},
      {"Desk overfit, mask stage", 900, mask_overfit},
      {"Desk overfit, translator", 1200, translator_overfit},
      {"Annealing schedule", 0, annealing},
      {"End-to-end determinism", 0, generate_determinism},
      {"Evaluation sanity", 0, evaluation_sanity},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_seconds > 0 && secs >= c.limit_seconds) {
      o.pass = false;
      o.detail += "; over the " + fixed("%.0f", c.limit_seconds) + " s limit";
    }
    std::printf("[%s] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}

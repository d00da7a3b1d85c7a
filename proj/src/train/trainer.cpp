#include "mero/train/trainer.hpp"

#include <omp.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>

#include "mero/box/model.hpp"
#include "mero/mask/model.hpp"
#include "mero/nn/optim.hpp"
#include "mero/translate/model.hpp"

namespace mero::train {

using nn::Tensor;
using nn::Var;
using Metrics = std::map<std::string, double>;

namespace {

std::vector<const core::ObjectSample*> pointers(const std::vector<core::ObjectSample>& samples,
                                                const std::vector<std::size_t>& order, std::size_t begin,
                                                std::size_t end) {
  std::vector<const core::ObjectSample*> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(&samples[order[i]]);
  return out;
}

void check_finite(const Metrics& m, int epoch, long step) {
  for (const auto& [name, value] : m)
    if (!std::isfinite(value))
      throw TrainingDiverged("training diverged: " + name + " is " + std::to_string(value) + " at epoch " +
                             std::to_string(epoch) + ", step " + std::to_string(step) +
                             "; last.ckpt holds the last finite epoch");
}

// Accumulates batch-size weighted means.
struct Averager {
  Metrics sum;
  double weight = 0.0;
  void add(const Metrics& m, double w) {
    for (const auto& [k, v] : m) sum[k] += v * w;
    weight += w;
  }
  Metrics mean() const {
    Metrics out;
    for (const auto& [k, v] : sum) out[k] = weight > 0 ? v / weight : 0.0;
    return out;
  }
};

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

class StageRunner {
 public:
  virtual ~StageRunner() = default;
  virtual nn::Module& module() = 0;
  virtual nlohmann::json model_config() const = 0;
  virtual void set_learning_rate(int epoch) = 0;
  virtual Metrics step(const std::vector<const core::ObjectSample*>& batch, double lambda, nn::Rng& rng) = 0;
  virtual Metrics evaluate(const std::vector<const core::ObjectSample*>& batch, double lambda) = 0;
  virtual void save(const std::filesystem::path& path) = 0;
  virtual bool uses_lambda() const { return true; }
};

void adam_step(nn::Adam& opt, std::vector<Var>& params, double clip) {
  if (clip > 0) nn::clip_grad_norm(params, clip);
  opt.step();
}

nn::AdamOptions adam_options(const TrainingConfig& c, double lr) {
  nn::AdamOptions o;
  o.lr = lr;
  o.beta1 = c.beta1;
  o.beta2 = c.beta2;
  o.eps = c.eps;
  return o;
}

class BoxRunner : public StageRunner {
 public:
  BoxRunner(const TrainingConfig& c, box::BoxVaeConfig mc, nn::Rng& init)
      : config_(c), model_(std::move(mc), init), params_(model_.parameters()),
        opt_(params_, adam_options(c, c.learning_rate)) {}
  nn::Module& module() override { return model_; }
  nlohmann::json model_config() const override { return model_.config().to_json(); }
  void set_learning_rate(int epoch) override { opt_.set_lr(learning_rate_at(config_, config_.learning_rate, epoch)); }

  Metrics step(const std::vector<const core::ObjectSample*>& samples, double lambda, nn::Rng& rng) override {
    const box::BoxBatch batch = box::make_box_batch(samples, model_.config());
    opt_.zero_grad();
    const box::BoxLosses l =
        box::box_objective(model_, batch, lambda, rng.normal_tensor({batch.size(), model_.config().latent}));
    const Metrics m = metrics(l);
    if (std::isfinite(m.at("total"))) {
      l.total.backward();
      adam_step(opt_, params_, config_.clip_norm);
    }
    return m;
  }

  Metrics evaluate(const std::vector<const core::ObjectSample*>& samples, double lambda) override {
    nn::NoGradGuard guard;
    const box::BoxBatch batch = box::make_box_batch(samples, model_.config());
    return metrics(box::box_objective(model_, batch, lambda, Tensor({batch.size(), model_.config().latent})));
  }

  void save(const std::filesystem::path& path) override {
    model_.set_ready(true);
    box::save_box_model(path, model_);
  }

 private:
  static Metrics metrics(const box::BoxLosses& l) {
    return {{"presence", l.presence.item()}, {"box", l.box.item()},     {"adjacency", l.adjacency.item()},
            {"kl", l.kl.item()},             {"reconstruction", l.reconstruction.item()},
            {"total", l.total.item()}};
  }

  TrainingConfig config_;
  box::BoxGcnVae model_;
  std::vector<Var> params_;
  nn::Adam opt_;
};

class MaskRunner : public StageRunner {
 public:
  MaskRunner(const TrainingConfig& c, mask::MaskVaeConfig mc, nn::Rng& init)
      : config_(c), model_(std::move(mc), init), params_(model_.parameters()),
        opt_(params_, adam_options(c, c.learning_rate)) {}
  nn::Module& module() override { return model_; }
  nlohmann::json model_config() const override { return model_.config().to_json(); }
  void set_learning_rate(int epoch) override { opt_.set_lr(learning_rate_at(config_, config_.learning_rate, epoch)); }

  Metrics step(const std::vector<const core::ObjectSample*>& samples, double lambda, nn::Rng& rng) override {
    const mask::MaskBatch batch = mask::make_mask_batch(samples, model_.config());
    opt_.zero_grad();
    const mask::MaskLosses l =
        mask::mask_objective(model_, batch, lambda, rng.normal_tensor({batch.size(), model_.config().latent}));
    const Metrics m = metrics(l);
    if (std::isfinite(m.at("total"))) {
      l.total.backward();
      adam_step(opt_, params_, config_.clip_norm);
    }
    return m;
  }

  Metrics evaluate(const std::vector<const core::ObjectSample*>& samples, double lambda) override {
    nn::NoGradGuard guard;
    const mask::MaskBatch batch = mask::make_mask_batch(samples, model_.config());
    return metrics(mask::mask_objective(model_, batch, lambda, Tensor({batch.size(), model_.config().latent})));
  }

  void save(const std::filesystem::path& path) override {
    model_.set_ready(true);
    mask::save_mask_model(path, model_);
  }

 private:
  static Metrics metrics(const mask::MaskLosses& l) {
    return {{"kl", l.kl.item()}, {"reconstruction", l.reconstruction.item()}, {"total", l.total.item()}};
  }

  TrainingConfig config_;
  mask::LabelMapVae model_;
  std::vector<Var> params_;
  nn::Adam opt_;
};

class TranslatorRunner : public StageRunner {
 public:
  TranslatorRunner(const TrainingConfig& c, translate::TranslatorConfig mc, nn::Rng& init)
      : config_(c),
        model_(std::move(mc), init),
        g_params_(model_.generator.parameters()),
        d_params_(model_.discriminator.parameters()),
        g_opt_(g_params_, adam_options(c, c.learning_rate)),
        d_opt_(d_params_, adam_options(c, disc_rate())) {}
  nn::Module& module() override { return model_; }
  nlohmann::json model_config() const override { return model_.config().to_json(); }
  bool uses_lambda() const override { return false; }
  void set_learning_rate(int epoch) override {
    g_opt_.set_lr(learning_rate_at(config_, config_.learning_rate, epoch));
    d_opt_.set_lr(learning_rate_at(config_, disc_rate(), epoch));
  }

  Metrics step(const std::vector<const core::ObjectSample*>& samples, double, nn::Rng&) override {
    const translate::TranslatorBatch batch = translate::make_translator_batch(samples, model_.config());
    const Var real = nn::constant(batch.images);
    const Var fake = model_.generator(batch.label_maps, batch.category);

    // Discriminator update on a detached fake.
    d_opt_.zero_grad();
    const auto d_real = model_.discriminator(batch.label_maps, real, batch.category);
    const auto d_fake = model_.discriminator(batch.label_maps, nn::detach(fake), batch.category);
    const Var d_loss = translate::loss_discriminator(d_real.scores, d_fake.scores);
    Metrics m{{"d_loss", d_loss.item()}};
    if (!std::isfinite(m["d_loss"])) return m;
    d_loss.backward();
    adam_step(d_opt_, d_params_, config_.clip_norm);

    // Generator update through the refreshed discriminator.
    g_opt_.zero_grad();
    const auto g_real = model_.discriminator(batch.label_maps, real, batch.category);
    const auto g_fake = model_.discriminator(batch.label_maps, fake, batch.category);
    const translate::GeneratorLosses g = generator_losses(g_real, g_fake, real, fake);
    m["g_adversarial"] = g.adversarial.item();
    m["g_disc_features"] = g.disc_features.item();
    m["g_perceptual"] = g.perceptual.item();
    m["g_total"] = g.total.item();
    m["l1"] = nn::l1_loss(nn::detach(fake), real).item();
    m["total"] = m["g_total"];
    if (!std::isfinite(m["g_total"])) return m;
    g.total.backward();
    model_.discriminator.zero_grad();
    adam_step(g_opt_, g_params_, config_.clip_norm);
    return m;
  }

  Metrics evaluate(const std::vector<const core::ObjectSample*>& samples, double) override {
    nn::NoGradGuard guard;
    const translate::TranslatorBatch batch = translate::make_translator_batch(samples, model_.config());
    const Var real = nn::constant(batch.images);
    const Var fake = model_.generator(batch.label_maps, batch.category);
    const auto d_real = model_.discriminator(batch.label_maps, real, batch.category);
    const auto d_fake = model_.discriminator(batch.label_maps, fake, batch.category);
    const translate::GeneratorLosses g = generator_losses(d_real, d_fake, real, fake);
    const double l1 = nn::l1_loss(fake, real).item();
    return {{"d_loss", translate::loss_discriminator(d_real.scores, d_fake.scores).item()},
            {"g_total", g.total.item()},
            {"l1", l1},
            {"total", l1}};
  }

  void save(const std::filesystem::path& path) override {
    model_.set_ready(true);
    translate::save_translator(path, model_);
  }

 private:
  double disc_rate() const { return config_.disc_learning_rate > 0 ? config_.disc_learning_rate : config_.learning_rate; }

  translate::GeneratorLosses generator_losses(const translate::DiscriminatorOutput& real_out,
                                              const translate::DiscriminatorOutput& fake_out, const Var& real,
                                              const Var& fake) const {
    std::vector<Var> rf, ff;
    for (const auto& v : real_out.features) rf.insert(rf.end(), v.begin(), v.end());
    for (const auto& v : fake_out.features) ff.insert(ff.end(), v.begin(), v.end());
    const auto& mc = model_.config();
    return translate::loss_generator(fake_out.scores, rf, ff, model_.perceptual.features(real),
                                     model_.perceptual.features(fake), mc.disc_feature_weight, mc.perceptual_weight);
  }

  TrainingConfig config_;
  translate::Translator model_;
  std::vector<Var> g_params_, d_params_;
  nn::Adam g_opt_, d_opt_;
};

nlohmann::json merged(nlohmann::json base, const nlohmann::json& patch) {
  base.merge_patch(patch);
  return base;
}

template <typename Cfg>
Cfg parse_model(const nlohmann::json& j) {
  try {
    return Cfg::from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

int mask_resolution_of(const StageData& data) {
  if (!data.train.empty()) return data.train.front().mask_resolution;
  return core::kDefaultMaskResolution;
}

std::unique_ptr<StageRunner> make_runner(const TrainingConfig& config, const StageData& data, nn::Rng& init) {
  const nlohmann::json mc = stage_model_config(config, data);
  switch (config.stage) {
    case Stage::box:
      return std::make_unique<BoxRunner>(config, parse_model<box::BoxVaeConfig>(mc), init);
    case Stage::labelmap:
      return std::make_unique<MaskRunner>(config, parse_model<mask::MaskVaeConfig>(mc), init);
    case Stage::label2obj:
      return std::make_unique<TranslatorRunner>(config, parse_model<translate::TranslatorConfig>(mc), init);
  }
  throw ValidationError("unknown stage");
}

void append_line(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump() << '\n';
}

}  // namespace

core::Split holdout_split(const core::Dataset& dataset, std::uint64_t seed) {
  nn::Rng rng(nn::mix_seed(seed, 0x5b1d));
  return core::split_dataset(dataset.samples, rng);
}

StageData prepare_stage_data(const core::Dataset& dataset, const TrainingConfig& config) {
  StageData data;
  data.schema = dataset.schema;
  if (!config.holdout) {
    data.train = dataset.samples;
    data.val = dataset.samples;
    return data;
  }
  core::Split split = holdout_split(dataset, config.seed);
  data.train = std::move(split.train);
  data.val = std::move(split.val);
  if (data.val.empty()) {
    spdlog::warn("no validation samples after the split; validating on the training set");
    data.val = data.train;
  }
  return data;
}

nlohmann::json stage_model_config(const TrainingConfig& config, const StageData& data) {
  switch (config.stage) {
    case Stage::box:
      return merged(box::BoxVaeConfig::for_schema(data.schema).to_json(), config.model);
    case Stage::labelmap:
      return merged(mask::MaskVaeConfig::for_schema(data.schema, mask_resolution_of(data)).to_json(), config.model);
    case Stage::label2obj:
      return merged(
          translate::TranslatorConfig::for_schema(data.schema.p, data.schema.category_count()).to_json(),
          config.model);
  }
  return {};
}

TrainResult train_stage(const TrainingConfig& config, const StageData& data, const std::filesystem::path& out_dir) {
  config.validate();
  for (const auto& up : config.upstream)
    if (!std::filesystem::exists(up)) throw NotFoundError("missing upstream checkpoint " + up);
  if (data.train.empty()) throw ValidationError("train_stage: no training samples");
  if (config.threads > 0) omp_set_num_threads(config.threads);

  std::filesystem::create_directories(out_dir);
  const auto metrics_path = out_dir / "metrics.jsonl", timing_path = out_dir / "timing.jsonl";
  std::filesystem::remove(metrics_path);
  std::filesystem::remove(timing_path);

  nn::Rng init(nn::mix_seed(config.seed, 1));
  nn::Rng data_rng(nn::mix_seed(config.seed, 2));
  nn::Rng noise_rng(nn::mix_seed(config.seed, 3));
  auto runner = make_runner(config, data, init);

  TrainResult result;
  result.last_checkpoint = out_dir / "last.ckpt";
  result.best_checkpoint = out_dir / "best.ckpt";
  append_line(metrics_path, {{"record", "header"},
                             {"stage", stage_name(config.stage)},
                             {"config", config.to_json()},
                             {"model", runner->model_config()},
                             {"parameters", runner->module().parameter_count()},
                             {"train_samples", data.train.size()},
                             {"val_samples", data.val.size()}});
  runner->save(result.last_checkpoint);
  runner->save(result.best_checkpoint);

  const std::size_t n = data.train.size(), bs = static_cast<std::size_t>(config.batch_size);
  const long batches_per_epoch = static_cast<long>((n + bs - 1) / bs);
  const int total_epochs = config.total_epochs();
  const long total_steps = std::max(1L, batches_per_epoch * total_epochs);
  const int log_every = std::max(1, total_epochs / 20);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> val_order(data.val.size());
  std::iota(val_order.begin(), val_order.end(), 0);

  AnnealState anneal;
  bool have_best = false;
  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    runner->set_learning_rate(epoch);
    std::shuffle(order.begin(), order.end(), data_rng.engine());

    std::vector<core::ObjectSample> augmented;
    const std::vector<core::ObjectSample>* source = &data.train;
    if (!config.augment.is_identity()) {
      for (const auto& s : data.train) augmented.push_back(core::augment(s, config.augment, data_rng));
      source = &augmented;
    }

    Averager train_avg;
    for (std::size_t b = 0; b < n; b += bs) {
      if (runner->uses_lambda() && !anneal.frozen)
        anneal.lambda_current = cyclic_lambda(anneal.step, total_steps, config);
      const auto batch = pointers(*source, order, b, std::min(n, b + bs));
      const Metrics m = runner->step(batch, anneal.lambda_current, noise_rng);
      check_finite(m, epoch, anneal.step);
      train_avg.add(m, static_cast<double>(batch.size()));
      ++anneal.step;
    }
    const Metrics train_m = train_avg.mean();

    Averager val_avg;
    for (std::size_t b = 0; b < data.val.size(); b += bs) {
      const auto batch = pointers(data.val, val_order, b, std::min(data.val.size(), b + bs));
      val_avg.add(runner->evaluate(batch, anneal.lambda_current), static_cast<double>(batch.size()));
    }
    const Metrics val_m = val_avg.mean();
    check_finite(val_m, epoch, anneal.step);

    if (runner->uses_lambda())
      anneal = update_freeze(anneal, train_m.at("reconstruction"), val_m.at("reconstruction"), config);

    const double val_total = val_m.at("total");
    const bool best = !have_best || val_total < result.best_val;
    if (best) {
      result.best_val = val_total;
      have_best = true;
      runner->save(result.best_checkpoint);
    }
    runner->save(result.last_checkpoint);

    nlohmann::json record = {{"record", "epoch"},
                             {"epoch", epoch},
                             {"steps", anneal.step},
                             {"lambda", anneal.lambda_current},
                             {"frozen", anneal.frozen},
                             {"learning_rate", learning_rate_at(config, config.learning_rate, epoch)},
                             {"train", to_json(train_m)},
                             {"val", to_json(val_m)},
                             {"best", best}};
    append_line(metrics_path, record);
    result.trace.push_back(std::move(record));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_line(timing_path, {{"epoch", epoch}, {"seconds", seconds}});
    if (epoch % log_every == 0 || epoch + 1 == total_epochs)
      spdlog::info("{} epoch {}/{}: train {:.5f} val {:.5f} lambda {:.3f}{} ({:.1f}s)", stage_name(config.stage),
                   epoch + 1, total_epochs, train_m.at("total"), val_total, anneal.lambda_current,
                   anneal.frozen ? " frozen" : "", seconds);
  }
  result.steps = anneal.step;
  return result;
}

}  // namespace mero::train

#include "mero/train/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "mero/core/png_io.hpp"
#include "mero/error.hpp"

namespace mero::train {

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::box:
      return "box";
    case Stage::labelmap:
      return "labelmap";
    case Stage::label2obj:
      return "label2obj";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  if (name == "box") return Stage::box;
  if (name == "labelmap") return Stage::labelmap;
  if (name == "label2obj") return Stage::label2obj;
  throw ValidationError("unknown stage '" + name + "' (expected box, labelmap or label2obj)");
}

TrainingConfig TrainingConfig::defaults(Stage stage) {
  TrainingConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::box:
      c.learning_rate = 1e-4, c.epochs = 300, c.batch_size = 32;
      break;
    case Stage::labelmap:
      c.learning_rate = 1e-3, c.epochs = 110, c.batch_size = 8, c.clip_norm = 5.0;
      break;
    case Stage::label2obj:
      c.learning_rate = 2e-4, c.epochs = 8, c.decay_epochs = 4, c.batch_size = 16;
      c.beta1 = 0.5;
      break;
  }
  return c;
}

nlohmann::json TrainingConfig::to_json() const {
  return {{"stage", stage_name(stage)},
          {"learning_rate", learning_rate},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"decay_epochs", decay_epochs},
          {"disc_learning_rate", disc_learning_rate},
          {"cycle_count", cycle_count},
          {"ramp_fraction", ramp_fraction},
          {"lambda_max", lambda_max},
          {"freeze_threshold", freeze_threshold},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"clip_norm", clip_norm},
          {"seed", seed},
          {"threads", threads},
          {"holdout", holdout},
          {"augment",
           {{"translate", augment.translate},
            {"part_scale_min", augment.part_scale_min},
            {"part_scale_max", augment.part_scale_max},
            {"object_scale_min", augment.object_scale_min},
            {"object_scale_max", augment.object_scale_max},
            {"mirror_probability", augment.mirror_probability}}},
          {"model", model},
          {"upstream", upstream}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("training config must be a JSON object");
  if (!j.contains("stage")) throw FormatError("training config: missing \"stage\"");
  TrainingConfig c = defaults(parse_stage(j.at("stage").get<std::string>()));
  static const std::set<std::string> known{"stage",        "learning_rate", "epochs",     "batch_size",
                                           "decay_epochs", "disc_learning_rate", "cycle_count", "ramp_fraction",
                                           "lambda_max",   "freeze_threshold", "beta1",      "beta2",
                                           "eps",          "clip_norm",     "seed",       "threads",
                                           "holdout",      "augment",       "model",      "upstream"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw FormatError("training config: unknown key \"" + key + "\"");
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("learning_rate", c.learning_rate);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("decay_epochs", c.decay_epochs);
    get("disc_learning_rate", c.disc_learning_rate);
    get("cycle_count", c.cycle_count);
    get("ramp_fraction", c.ramp_fraction);
    get("lambda_max", c.lambda_max);
    get("freeze_threshold", c.freeze_threshold);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("eps", c.eps);
    get("clip_norm", c.clip_norm);
    get("seed", c.seed);
    get("threads", c.threads);
    get("holdout", c.holdout);
    get("model", c.model);
    get("upstream", c.upstream);
    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      auto aget = [&](const char* key, double& field) {
        if (a.contains(key)) field = a.at(key).get<double>();
      };
      aget("translate", c.augment.translate);
      aget("part_scale_min", c.augment.part_scale_min);
      aget("part_scale_max", c.augment.part_scale_max);
      aget("object_scale_min", c.augment.object_scale_min);
      aget("object_scale_max", c.augment.object_scale_max);
      aget("mirror_probability", c.augment.mirror_probability);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

void TrainingConfig::validate() const {
  MERO_CHECK(learning_rate > 0 && std::isfinite(learning_rate), "training config: learning_rate must be positive");
  MERO_CHECK(disc_learning_rate >= 0, "training config: disc_learning_rate must not be negative");
  MERO_CHECK(epochs >= 0 && decay_epochs >= 0, "training config: epoch counts must not be negative");
  MERO_CHECK(batch_size > 0, "training config: batch_size must be positive");
  MERO_CHECK(cycle_count > 0, "training config: cycle_count must be positive");
  MERO_CHECK(ramp_fraction > 0 && ramp_fraction <= 1, "training config: ramp_fraction must be in (0, 1]");
  MERO_CHECK(lambda_max >= 0, "training config: lambda_max must not be negative");
  MERO_CHECK(freeze_threshold >= 0, "training config: freeze_threshold must not be negative");
  MERO_CHECK(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0, "training config: bad optimizer constants");
  MERO_CHECK(clip_norm >= 0, "training config: clip_norm must not be negative");
  MERO_CHECK(threads >= 0, "training config: threads must not be negative");
  MERO_CHECK(model.is_object(), "training config: model must be an object");
  augment.validate();
}

TrainingConfig load_training_config(const std::filesystem::path& path) {
  const std::string text = core::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return TrainingConfig::from_json(j);
}

double cyclic_lambda(long step, long total_steps, const TrainingConfig& config) {
  MERO_CHECK(total_steps > 0 && step >= 0, "cyclic_lambda: need 0 <= step and total_steps > 0");
  const double cycle = static_cast<double>(total_steps) / config.cycle_count;
  const double t = std::fmod(static_cast<double>(step), cycle) / cycle;
  return config.lambda_max * std::min(1.0, t / config.ramp_fraction);
}

AnnealState update_freeze(AnnealState state, double train_loss, double val_loss, const TrainingConfig& config) {
  state.frozen = (val_loss - train_loss) > config.freeze_threshold;
  return state;
}

double learning_rate_at(const TrainingConfig& config, double base_rate, int epoch) {
  if (epoch < config.epochs || config.decay_epochs == 0) return base_rate;
  const int into = epoch - config.epochs;
  return base_rate * (1.0 - static_cast<double>(into) / config.decay_epochs);
}

std::vector<core::Box> scale_boxes_for_rendering(const core::PartGraph& graph) {
  std::vector<core::Box> out;
  for (const auto& b : graph.boxes)
    out.push_back({b.x0 * kRenderScale, b.y0 * kRenderScale, b.x1 * kRenderScale, b.y1 * kRenderScale});
  return out;
}

core::Box unscale_box(const core::Box& b) {
  return {b.x0 / kRenderScale, b.y0 / kRenderScale, b.x1 / kRenderScale, b.y1 / kRenderScale};
}

}  // namespace mero::train

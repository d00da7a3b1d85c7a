#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mero/core/dataset.hpp"
#include "mero/core/sample.hpp"

namespace mero::train {

enum class Stage { box, labelmap, label2obj };

std::string stage_name(Stage s);
Stage parse_stage(const std::string& name);

struct TrainingConfig {
  Stage stage = Stage::box;
  double learning_rate = 1e-4;
  int epochs = 300;
  int batch_size = 32;
  int decay_epochs = 0;             // extra epochs with the rate decaying linearly to 0
  double disc_learning_rate = 0.0;  // label2obj discriminator; 0 means learning_rate
  int cycle_count = 4;
  double ramp_fraction = 0.5;
  double lambda_max = 1.0;
  double freeze_threshold = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  int threads = 0;       // 0 keeps the OpenMP default
  bool holdout = true;   // false: train and validate on every sample
  core::AugmentConfig augment;
  nlohmann::json model = nlohmann::json::object();  // merged over the stage's default model config
  std::vector<std::string> upstream;                // checkpoints that must exist before training

  static TrainingConfig defaults(Stage stage);
  int total_epochs() const { return epochs + decay_epochs; }
  nlohmann::json to_json() const;
  // Keys missing from `j` keep the stage defaults; unknown keys are rejected.
  static TrainingConfig from_json(const nlohmann::json& j);
  void validate() const;
};

TrainingConfig load_training_config(const std::filesystem::path& path);

// Per cycle of length total_steps / cycle_count: lambda rises linearly from 0
// to lambda_max over the first ramp_fraction of the cycle, then holds.
//   t = (step mod L) / L,  lambda = lambda_max * min(1, t / ramp_fraction)
double cyclic_lambda(long step, long total_steps, const TrainingConfig& config);

struct AnnealState {
  long step = 0;
  double lambda_current = 0.0;
  bool frozen = false;
};

// Epoch-level freeze: frozen while (val_loss - train_loss) > threshold.
AnnealState update_freeze(AnnealState state, double train_loss, double val_loss, const TrainingConfig& config);

// Constant for `epochs`, then linear decay over `decay_epochs`.
double learning_rate_at(const TrainingConfig& config, double base_rate, int epoch);

inline constexpr double kRenderScale = 500.0;
std::vector<core::Box> scale_boxes_for_rendering(const core::PartGraph& graph);
core::Box unscale_box(const core::Box& pixels);

}  // namespace mero::train

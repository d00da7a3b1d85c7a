#pragma once

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "mero/core/dataset.hpp"
#include "mero/error.hpp"
#include "mero/train/config.hpp"

namespace mero::train {

// A non-finite loss stopped training; last.ckpt holds the last good epoch.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

struct StageData {
  core::Schema schema;
  std::vector<core::ObjectSample> train;
  std::vector<core::ObjectSample> val;
};

// The stratified train/val/test split every stage uses for a given seed.
core::Split holdout_split(const core::Dataset& dataset, std::uint64_t seed);

// Seeded stratified split, or every sample on both sides when holdout is off.
StageData prepare_stage_data(const core::Dataset& dataset, const TrainingConfig& config);

struct TrainResult {
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  std::vector<nlohmann::json> trace;  // one record per epoch
  double best_val = 0.0;
  long steps = 0;
};

// Writes <out>/metrics.jsonl (header + one record per epoch, deterministic
// for a fixed seed), <out>/timing.jsonl (wall-clock per epoch), and
// <out>/last.ckpt / <out>/best.ckpt. The initial model is saved before the
// first step so a failure always leaves a loadable checkpoint.
TrainResult train_stage(const TrainingConfig& config, const StageData& data, const std::filesystem::path& out_dir);

// Model configs the stage would build for this data, after the config's
// "model" overrides.
nlohmann::json stage_model_config(const TrainingConfig& config, const StageData& data);

}  // namespace mero::train

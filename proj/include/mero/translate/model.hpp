#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "mero/core/raster.hpp"
#include "mero/mask/label_map.hpp"
#include "mero/nn/module.hpp"

namespace mero::translate {

struct TranslatorConfig {
  int p = 0;
  int categories = 0;
  int resolution = 128;
  int embedding = 64;       // d_e
  int category_planes = 8;  // embedding -> this many constant planes
  // One entry per SPADE residual block.
  std::vector<int> generator_channels{1024, 1024, 1024, 512, 256, 128, 64};
  int spade_hidden = 128;
  int upsamples = 5;  // base grid is resolution / 2^upsamples
  int disc_channels = 64;
  int disc_scales = 2;
  std::vector<int> perceptual_channels{16, 32, 64};
  std::uint64_t perceptual_seed = 20211;
  double disc_feature_weight = 10.0;
  double perceptual_weight = 10.0;

  static TranslatorConfig for_schema(int p, int categories);
  // Reduced widths that train on one CPU core in minutes.
  static TranslatorConfig desk(int p, int categories);
  int base_resolution() const { return resolution >> upsamples; }
  bool upsample_after(int block) const;
  nlohmann::json to_json() const;
  static TranslatorConfig from_json(const nlohmann::json& j);
  void validate() const;
};

// Category id -> d_e embedding -> category_planes values, broadcast over a
// spatial grid and stacked behind the resized label map.
class CategoryPlanes : public nn::Module {
 public:
  CategoryPlanes() = default;
  CategoryPlanes(int categories, int embedding, int planes, nn::Rng& rng);
  nn::Var operator()(const nn::Tensor& category) const;  // [B, planes]
  void visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) override;

  nn::Embedding table;
  nn::Linear to_planes;
};

class SpadeNorm : public nn::Module {
 public:
  SpadeNorm() = default;
  SpadeNorm(int channels, int cond_channels, int hidden, nn::Rng& rng);
  nn::Var operator()(const nn::Var& x, const nn::Var& cond) const;
  void visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) override;

  nn::Conv2d shared, gamma, beta;
};

class SpadeResBlock : public nn::Module {
 public:
  SpadeResBlock() = default;
  SpadeResBlock(int in, int out, int cond_channels, int hidden, nn::Rng& rng);
  nn::Var operator()(const nn::Var& x, const nn::Var& cond) const;
  void visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) override;

  SpadeNorm norm0, norm1, norm_skip;
  nn::Conv2d conv0, conv1, conv_skip;
  bool learned_skip = false;
};

class Generator : public nn::Module {
 public:
  Generator() = default;
  Generator(const TranslatorConfig& config, nn::Rng& rng);
  // label_map [B, p, H, W] one-hot, category [B, M] -> image [B, 3, H, W] in [-1, 1]
  nn::Var operator()(const nn::Tensor& label_map, const nn::Tensor& category) const;
  void visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) override;

  CategoryPlanes category_planes;
  nn::Conv2d head;
  std::vector<SpadeResBlock> blocks;
  nn::Conv2d to_rgb;

 private:
  TranslatorConfig config_;
};

struct DiscriminatorOutput {
  std::vector<nn::Var> scores;                 // one patch map per scale
  std::vector<std::vector<nn::Var>> features;  // intermediate activations per scale
};

// Patch discriminator on (label map, image, category planes). Scale s sees
// the input average-pooled by 2^s; its score map is H / 2^(s+2) on a side.
class Discriminator : public nn::Module {
 public:
  Discriminator() = default;
  Discriminator(const TranslatorConfig& config, nn::Rng& rng);
  DiscriminatorOutput operator()(const nn::Tensor& label_map, const nn::Var& image, const nn::Tensor& category) const;
  void visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) override;

  CategoryPlanes category_planes;
  std::vector<std::vector<nn::Conv2d>> scales;

 private:
  TranslatorConfig config_;
};

// Fixed random-weight CNN used for the perceptual matching term. Its weights
// come from the config seed and are never trained or saved.
class PerceptualNet {
 public:
  PerceptualNet() = default;
  PerceptualNet(const std::vector<int>& channels, std::uint64_t seed);
  std::vector<nn::Var> features(const nn::Var& image) const;

 private:
  std::vector<nn::Var> weights_;
  std::vector<int> strides_;
};

// Generator and discriminator in one checkpointable module.
class Translator : public nn::Module {
 public:
  Translator(TranslatorConfig config, nn::Rng& rng);
  const TranslatorConfig& config() const { return config_; }
  void visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) override;
  bool ready() const { return ready_; }
  void set_ready(bool r) { ready_ = r; }

  Generator generator;
  Discriminator discriminator;
  PerceptualNet perceptual;

 private:
  TranslatorConfig config_;
  bool ready_ = false;
};

// Hinge objective averaged over patches, then over scales.
nn::Var loss_discriminator(const std::vector<nn::Var>& real_scores, const std::vector<nn::Var>& fake_scores);
// Mean of -score over patches and scales.
nn::Var adversarial_generator_term(const std::vector<nn::Var>& fake_scores);
// Mean over feature pairs of the mean absolute difference; real features
// are treated as constants.
nn::Var feature_matching(const std::vector<nn::Var>& real, const std::vector<nn::Var>& fake);

struct GeneratorLosses {
  nn::Var adversarial;
  nn::Var disc_features;
  nn::Var perceptual;
  nn::Var total;
};
GeneratorLosses loss_generator(const std::vector<nn::Var>& fake_scores, const std::vector<nn::Var>& real_disc_features,
                               const std::vector<nn::Var>& fake_disc_features,
                               const std::vector<nn::Var>& real_perceptual,
                               const std::vector<nn::Var>& fake_perceptual, double disc_weight,
                               double perceptual_weight);

struct TranslatorBatch {
  nn::Tensor label_maps;  // [B, p, H, W]
  nn::Tensor category;    // [B, M]
  nn::Tensor images;      // [B, 3, H, W] in [-1, 1]
  int size() const { return label_maps.empty() ? 0 : label_maps.dim(0); }
};
TranslatorBatch make_translator_batch(const std::vector<const core::ObjectSample*>& samples,
                                      const TranslatorConfig& config);

// 8-bit RGB raster <-> [3, H, W] values in [-1, 1].
nn::Tensor image_to_tensor(const core::Raster& image);
core::Raster tensor_to_image(const nn::Tensor& images, int row);

// Label map -> RGB sprite with the generator.
core::Raster render_sprite(const Translator& model, const mask::LabelMap& map);

inline constexpr const char* kTranslatorCheckpointKind = "label2obj";
void save_translator(const std::filesystem::path& path, Translator& model);
Translator load_translator(const std::filesystem::path& path);

}  // namespace mero::translate

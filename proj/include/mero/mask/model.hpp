#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "mero/box/losses.hpp"
#include "mero/core/sample.hpp"
#include "mero/core/schema.hpp"
#include "mero/mask/label_map.hpp"
#include "mero/nn/module.hpp"

namespace mero::mask {

using box::Posterior;

struct MaskVaeConfig {
  int p = 0;
  int categories = 0;
  int mask_resolution = core::kDefaultMaskResolution;  // divisible by 8
  int sequence_hidden = 128;                           // h_s
  int box_hidden = 64;                                 // h_b
  int latent = 128;                                    // d_m
  std::vector<int> channels{16, 32, 64};               // mask CNN, coarse end last

  static MaskVaeConfig for_schema(const core::Schema& schema, int mask_resolution = core::kDefaultMaskResolution);
  nlohmann::json to_json() const;
  static MaskVaeConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct MaskBatch {
  nn::Tensor masks;     // [B, p, m, m] 0/1, zero for absent slots
  nn::Tensor boxes;     // [B, p, 4], zero for absent slots
  nn::Tensor category;  // [B, M]
  nn::Tensor presence;  // [B, p]
  int size() const { return masks.empty() ? 0 : masks.dim(0); }
};

MaskBatch make_mask_batch(const std::vector<const core::ObjectSample*>& samples, const MaskVaeConfig& config);

// Three stride-2 convolutions and a linear map: [N, 1, m, m] -> [N, out].
class MaskEncoderCnn : public nn::Module {
 public:
  MaskEncoderCnn() = default;
  MaskEncoderCnn(int m, const std::vector<int>& channels, int out, nn::Rng& rng);
  nn::Var operator()(const nn::Var& x) const;
  void visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) override;

  std::vector<nn::Conv2d> convs;
  nn::Linear project;
};

// Linear map to a coarse grid and three nearest-upsample + convolution
// blocks: [N, in] -> [N, 2, m, m] binary logits.
class MaskDecoderCnn : public nn::Module {
 public:
  MaskDecoderCnn() = default;
  MaskDecoderCnn(int m, const std::vector<int>& channels, int in, nn::Rng& rng);
  nn::Var operator()(const nn::Var& x) const;
  void visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) override;

  nn::Linear expand;
  std::vector<nn::Conv2d> convs;

 private:
  int coarse_ = 0;
  int coarse_channels_ = 0;
};

// Box path: bidirectional GRU over per-slot boxes, then a shared 1x1 map to
// h_s and a sigmoid, giving the gate rows H_b.
class BoxGatePath : public nn::Module {
 public:
  BoxGatePath() = default;
  BoxGatePath(int box_hidden, int sequence_hidden, nn::Rng& rng);
  // boxes [B, p, 4] -> p rows of [B, h_s]
  std::vector<nn::Var> operator()(const nn::Tensor& boxes) const;
  void visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) override;

  nn::BiGru gru;
  nn::Linear transform;
};

class LabelMapVae : public nn::Module {
 public:
  LabelMapVae(MaskVaeConfig config, nn::Rng& rng);

  Posterior encode(const nn::Tensor& masks, const nn::Tensor& boxes, const nn::Tensor& category) const;
  // Foreground probabilities [B, p, m, m] for every slot.
  nn::Var decode(const nn::Var& z, const nn::Tensor& boxes, const nn::Tensor& category) const;

  const MaskVaeConfig& config() const { return config_; }
  void visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) override;
  bool ready() const { return ready_; }
  void set_ready(bool r) { ready_ = r; }

  // encoder
  MaskEncoderCnn mask_cnn;
  nn::BiGru sequence_gru;
  BoxGatePath encoder_boxes;
  nn::Embedding encoder_category;
  nn::Linear mu_head;
  nn::Linear log_var_head;
  // decoder
  BoxGatePath decoder_boxes;
  nn::Embedding decoder_category;
  nn::Linear latent_map;  // d_m -> h_s
  nn::BiGru decoder_gru;  // input 2 h_s
  MaskDecoderCnn mask_decoder;

 private:
  void check_inputs(const nn::Tensor& boxes, const nn::Tensor& category, int batch) const;

  MaskVaeConfig config_;
  bool ready_ = false;
};

// Mean over present slots of the mean per-pixel BCE, averaged over the batch;
// an object without present slots contributes 0.
nn::Var loss_masks(const nn::Var& probs, const nn::Tensor& target, const nn::Tensor& presence);

struct MaskLosses {
  nn::Var reconstruction;
  nn::Var kl;
  nn::Var total;
};

MaskLosses mask_objective(const LabelMapVae& model, const MaskBatch& batch, double lambda, const nn::Tensor& noise);

// z = mu reconstruction probabilities, no graph recorded.
nn::Tensor reconstruct_masks(const LabelMapVae& model, const MaskBatch& batch);

// Threshold one object's decoded rasters at 0.5.
std::vector<core::Mask> binarize(const nn::Tensor& probs, int row);

// z ~ N(0, I), decode under the layout's boxes, binarise, compose.
LabelMap sample_label_map(const LabelMapVae& model, const core::PartGraph& layout, nn::Rng& rng,
                          int canvas = core::kCanvasSize);

// Decode masks for a layout with explicit z; used when only some slots are
// re-generated.
nn::Tensor decode_for_layout(const LabelMapVae& model, const core::PartGraph& layout, const nn::Tensor& z);

inline constexpr const char* kMaskCheckpointKind = "labelmap_vae";
void save_mask_model(const std::filesystem::path& path, LabelMapVae& model);
LabelMapVae load_mask_model(const std::filesystem::path& path);

}  // namespace mero::mask

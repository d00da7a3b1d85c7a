#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "mero/box/losses.hpp"
#include "mero/core/sample.hpp"
#include "mero/core/schema.hpp"
#include "mero/nn/module.hpp"

namespace mero::box {

struct BoxVaeConfig {
  int p = 0;
  int categories = 0;
  std::vector<int> gcn_widths{32, 64};
  int readout = 128;
  int latent = 64;
  int hidden = 256;
  bool encoder_conditioning = true;
  // Slots owned by each category, used to validate decoder part lists.
  std::vector<std::vector<std::uint8_t>> slot_masks;

  static BoxVaeConfig for_schema(const core::Schema& schema);
  nlohmann::json to_json() const;
  static BoxVaeConfig from_json(const nlohmann::json& j);
  void validate() const;
};

// Batched layout tensors in the global slot frame.
struct BoxBatch {
  nn::Tensor x;          // [B, p, 5]
  nn::Tensor adjacency;  // [B, p, p]
  nn::Tensor category;   // [B, M] one-hot
  nn::Tensor presence;   // [B, p], doubles as the decoder part list
  nn::Tensor boxes;      // [B, p, 4]
  int size() const { return x.empty() ? 0 : x.dim(0); }
};

BoxBatch make_box_batch(const std::vector<const core::ObjectSample*>& samples, const BoxVaeConfig& config);
nn::Tensor one_hot(const std::vector<int>& ids, int count);

// D^{-1/2} (A + I) D^{-1/2} for [p, p] or [B, p, p] adjacency.
nn::Tensor normalized_adjacency(const nn::Tensor& a);

// relu(a_hat * h * w); h is [p, F] or [B, p, F], a_hat matching.
nn::Var gcn_layer(const nn::Var& h, const nn::Tensor& a_hat, const nn::Var& w);

struct LayoutDecode {
  nn::Var presence;   // [B, p] probabilities
  nn::Var boxes;      // [B, p, 4] in [0, 1]
  nn::Var adjacency;  // [B, p, p] probabilities, symmetric
};

class BoxGcnVae : public nn::Module {
 public:
  BoxGcnVae(BoxVaeConfig config, nn::Rng& rng);

  Posterior encode(const nn::Tensor& x, const nn::Tensor& adjacency, const nn::Tensor& category) const;
  LayoutDecode decode(const nn::Var& z, const nn::Tensor& category, const nn::Tensor& part_list) const;

  const BoxVaeConfig& config() const { return config_; }
  void visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) override;

  // Set once weights come from training or a checkpoint; sampling refuses
  // to run on a freshly initialised model.
  bool ready() const { return ready_; }
  void set_ready(bool r) { ready_ = r; }

  std::vector<nn::Var> gcn_weights;  // [F_i, F_{i+1}], no bias
  nn::Linear readout;                // p * F_last -> readout
  nn::Embedding encoder_gate;        // M -> readout
  nn::Linear skip;                   // 4 -> readout, shared over slots (1x1 convolution)
  nn::Linear mu_head;
  nn::Linear log_var_head;
  nn::Linear decoder_gate;  // (M + p) -> latent
  nn::Linear fc1;           // latent + M + p -> hidden
  nn::Linear fc2;
  nn::Linear presence_head;
  nn::Linear box_head;
  nn::Linear adjacency_head;

 private:
  void check_category(const nn::Tensor& category, int batch) const;

  BoxVaeConfig config_;
  bool ready_ = false;
};

struct BoxLosses {
  nn::Var presence;
  nn::Var box;
  nn::Var adjacency;
  nn::Var kl;
  nn::Var reconstruction;  // presence + box + adjacency
  nn::Var total;           // reconstruction + lambda * kl
};

// Encodes the batch, samples z with `noise` ([B, latent]), decodes under the
// batch's own category and presence, and assembles the objective.
BoxLosses box_objective(const BoxGcnVae& model, const BoxBatch& batch, double lambda, const nn::Tensor& noise);

// Deterministic reconstruction (z = mu) used for overfit metrics.
LayoutDecode reconstruct(const BoxGcnVae& model, const BoxBatch& batch);

// Turns one decoded row into a valid PartGraph: presence thresholded at 0.5
// and intersected with part_list, corners ordered, adjacency thresholded and
// restricted to present slots. With PresenceRule::requested the part list
// itself is the presence set and the presence head is ignored.
enum class PresenceRule { decoded, requested };
core::PartGraph layout_from_decode(const LayoutDecode& out, int row, int category,
                                   const std::vector<std::uint8_t>& part_list,
                                   PresenceRule rule = PresenceRule::decoded);

// z ~ N(0, I) from rng, then decode.
core::PartGraph sample_layout(const BoxGcnVae& model, int category, const std::vector<std::uint8_t>& part_list,
                              nn::Rng& rng, PresenceRule rule = PresenceRule::decoded);

inline constexpr const char* kBoxCheckpointKind = "box_gcn_vae";
void save_box_model(const std::filesystem::path& path, BoxGcnVae& model);
BoxGcnVae load_box_model(const std::filesystem::path& path);

}  // namespace mero::box

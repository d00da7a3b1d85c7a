#include "mero/mask/model.hpp"

#include <algorithm>
#include <cmath>

#include "mero/box/model.hpp"
#include "mero/error.hpp"
#include "mero/nn/checkpoint.hpp"

namespace mero::mask {

using nn::Tensor;
using nn::Var;

namespace {

// [B, p, F] -> p vars of [B, F]
std::vector<Var> unstack(const Var& v) {
  const int b = v.dim(0), p = v.dim(1), f = v.dim(2);
  std::vector<Var> rows;
  for (int k = 0; k < p; ++k) rows.push_back(nn::reshape(nn::slice(v, 1, k, 1), {b, f}));
  return rows;
}

// p vars of [B, F] -> [B, p, F]
Var stack(const std::vector<Var>& rows) {
  std::vector<Var> parts;
  for (const Var& r : rows) parts.push_back(nn::reshape(r, {r.dim(0), 1, r.dim(1)}));
  return nn::concat(parts, 1);
}

}  // namespace

MaskVaeConfig MaskVaeConfig::for_schema(const core::Schema& schema, int mask_resolution) {
  MaskVaeConfig c;
  c.p = schema.p;
  c.categories = schema.category_count();
  c.mask_resolution = mask_resolution;
  return c;
}

nlohmann::json MaskVaeConfig::to_json() const {
  return {{"p", p},
          {"categories", categories},
          {"mask_resolution", mask_resolution},
          {"sequence_hidden", sequence_hidden},
          {"box_hidden", box_hidden},
          {"latent", latent},
          {"channels", channels}};
}

MaskVaeConfig MaskVaeConfig::from_json(const nlohmann::json& j) {
  MaskVaeConfig c;
  c.p = j.at("p").get<int>();
  c.categories = j.at("categories").get<int>();
  c.mask_resolution = j.at("mask_resolution").get<int>();
  c.sequence_hidden = j.at("sequence_hidden").get<int>();
  c.box_hidden = j.at("box_hidden").get<int>();
  c.latent = j.at("latent").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.validate();
  return c;
}

void MaskVaeConfig::validate() const {
  MERO_CHECK(p > 0 && categories > 0, "mask config: p and category count must be positive");
  MERO_CHECK(mask_resolution >= 8 && mask_resolution % 8 == 0, "mask config: resolution must be a multiple of 8");
  MERO_CHECK(sequence_hidden > 0 && sequence_hidden % 2 == 0, "mask config: h_s must be even and positive");
  MERO_CHECK(box_hidden > 0 && box_hidden % 2 == 0, "mask config: h_b must be even and positive");
  MERO_CHECK(latent > 0, "mask config: latent size must be positive");
  MERO_CHECK(channels.size() == 3, "mask config: exactly three CNN channel widths");
  for (int c : channels) MERO_CHECK(c > 0, "mask config: channel widths must be positive");
}

MaskBatch make_mask_batch(const std::vector<const core::ObjectSample*>& samples, const MaskVaeConfig& config) {
  const int b = static_cast<int>(samples.size()), p = config.p, m = config.mask_resolution;
  MERO_CHECK(b > 0, "mask batch: no samples");
  MaskBatch batch;
  batch.masks = Tensor({b, p, m, m});
  batch.boxes = Tensor({b, p, 4});
  batch.presence = Tensor({b, p});
  std::vector<int> cats;
  for (int i = 0; i < b; ++i) {
    const auto& s = *samples[i];
    MERO_CHECK(s.graph.p == p, "mask batch: sample slot count differs from the model");
    MERO_CHECK(s.mask_resolution == m, "mask batch: sample mask resolution differs from the model");
    cats.push_back(s.category());
    for (int k : s.part_list()) {
      batch.presence.at(i, k) = 1.0;
      const auto& bx = s.graph.boxes[k];
      double* dst = batch.boxes.data() + (static_cast<std::size_t>(i) * p + k) * 4;
      dst[0] = bx.x0, dst[1] = bx.y0, dst[2] = bx.x1, dst[3] = bx.y1;
      double* mdst = batch.masks.data() + (static_cast<std::size_t>(i) * p + k) * m * m;
      for (int j = 0; j < m * m; ++j) mdst[j] = s.masks[k].bits[j];
    }
  }
  batch.category = box::one_hot(cats, config.categories);
  return batch;
}

MaskEncoderCnn::MaskEncoderCnn(int m, const std::vector<int>& channels, int out, nn::Rng& rng) {
  int in = 1;
  for (int c : channels) {
    convs.emplace_back(in, c, 3, 2, 1, rng);
    in = c;
  }
  const int coarse = m / 8;
  project = nn::Linear(in * coarse * coarse, out, rng);
}

Var MaskEncoderCnn::operator()(const Var& x) const {
  Var h = x;
  for (const auto& conv : convs) h = nn::relu(conv(h));
  const int n = h.dim(0);
  return project(nn::reshape(h, {n, h.dim(1) * h.dim(2) * h.dim(3)}));
}

void MaskEncoderCnn::visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) {
  for (std::size_t i = 0; i < convs.size(); ++i) convs[i].visit_parameters(nn::join_name(prefix, "conv" + std::to_string(i)), fn);
  project.visit_parameters(nn::join_name(prefix, "project"), fn);
}

MaskDecoderCnn::MaskDecoderCnn(int m, const std::vector<int>& channels, int in, nn::Rng& rng)
    : coarse_(m / 8), coarse_channels_(channels.back()) {
  expand = nn::Linear(in, coarse_channels_ * coarse_ * coarse_, rng);
  convs.emplace_back(channels[2], channels[1], 3, 1, 1, rng);
  convs.emplace_back(channels[1], channels[0], 3, 1, 1, rng);
  convs.emplace_back(channels[0], 2, 3, 1, 1, rng);
}

Var MaskDecoderCnn::operator()(const Var& x) const {
  const int n = x.dim(0);
  Var h = nn::relu(nn::reshape(expand(x), {n, coarse_channels_, coarse_, coarse_}));
  for (std::size_t i = 0; i < convs.size(); ++i) {
    h = convs[i](nn::upsample_nearest(h, 2));
    if (i + 1 < convs.size()) h = nn::relu(h);
  }
  return h;
}

void MaskDecoderCnn::visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) {
  expand.visit_parameters(nn::join_name(prefix, "expand"), fn);
  for (std::size_t i = 0; i < convs.size(); ++i) convs[i].visit_parameters(nn::join_name(prefix, "conv" + std::to_string(i)), fn);
}

BoxGatePath::BoxGatePath(int box_hidden, int sequence_hidden, nn::Rng& rng)
    : gru(4, box_hidden / 2, rng), transform(box_hidden, sequence_hidden, rng) {}

std::vector<Var> BoxGatePath::operator()(const Tensor& boxes) const {
  std::vector<Var> rows = gru(unstack(nn::constant(boxes)));
  for (Var& r : rows) r = nn::sigmoid(transform(r));
  return rows;
}

void BoxGatePath::visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) {
  gru.visit_parameters(nn::join_name(prefix, "gru"), fn);
  transform.visit_parameters(nn::join_name(prefix, "transform"), fn);
}

LabelMapVae::LabelMapVae(MaskVaeConfig config, nn::Rng& rng) : config_(std::move(config)) {
  config_.validate();
  const int hs = config_.sequence_hidden, m = config_.mask_resolution;
  mask_cnn = MaskEncoderCnn(m, config_.channels, hs, rng);
  sequence_gru = nn::BiGru(hs, hs / 2, rng);
  encoder_boxes = BoxGatePath(config_.box_hidden, hs, rng);
  encoder_category = nn::Embedding(config_.categories, hs, rng);
  mu_head = nn::Linear(hs, config_.latent, rng);
  log_var_head = nn::Linear(hs, config_.latent, rng);
  decoder_boxes = BoxGatePath(config_.box_hidden, hs, rng);
  decoder_category = nn::Embedding(config_.categories, config_.latent, rng);
  latent_map = nn::Linear(config_.latent, hs, rng);
  decoder_gru = nn::BiGru(2 * hs, hs / 2, rng);
  mask_decoder = MaskDecoderCnn(m, config_.channels, hs, rng);
}

void LabelMapVae::visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) {
  mask_cnn.visit_parameters(nn::join_name(prefix, "encoder.mask_cnn"), fn);
  sequence_gru.visit_parameters(nn::join_name(prefix, "encoder.sequence_gru"), fn);
  encoder_boxes.visit_parameters(nn::join_name(prefix, "encoder.boxes"), fn);
  encoder_category.visit_parameters(nn::join_name(prefix, "encoder.category"), fn);
  mu_head.visit_parameters(nn::join_name(prefix, "encoder.mu"), fn);
  log_var_head.visit_parameters(nn::join_name(prefix, "encoder.log_var"), fn);
  decoder_boxes.visit_parameters(nn::join_name(prefix, "decoder.boxes"), fn);
  decoder_category.visit_parameters(nn::join_name(prefix, "decoder.category"), fn);
  latent_map.visit_parameters(nn::join_name(prefix, "decoder.latent_map"), fn);
  decoder_gru.visit_parameters(nn::join_name(prefix, "decoder.gru"), fn);
  mask_decoder.visit_parameters(nn::join_name(prefix, "decoder.mask_cnn"), fn);
}

void LabelMapVae::check_inputs(const Tensor& boxes, const Tensor& category, int batch) const {
  MERO_CHECK(boxes.shape() == (nn::Shape{batch, config_.p, 4}), "mask model: boxes must be [B, p, 4]");
  MERO_CHECK(category.shape() == (nn::Shape{batch, config_.categories}), "mask model: category must be [B, M]");
}

Posterior LabelMapVae::encode(const Tensor& masks, const Tensor& boxes, const Tensor& category) const {
  const int p = config_.p, m = config_.mask_resolution;
  MERO_CHECK(masks.rank() == 4 && masks.dim(1) == p && masks.dim(2) == m && masks.dim(3) == m,
             "encode_masks: masks must be [B, p, m, m] at the configured resolution");
  const int b = masks.dim(0);
  check_inputs(boxes, category, b);

  const Var feats = mask_cnn(nn::constant(masks.reshaped({b * p, 1, m, m})));
  const std::vector<Var> hs = sequence_gru(unstack(nn::reshape(feats, {b, p, config_.sequence_hidden})));
  const std::vector<Var> hb = encoder_boxes(boxes);
  std::vector<Var> gated;
  for (int k = 0; k < p; ++k) gated.push_back(hs[k] * hb[k]);
  Var pooled = nn::mean_axis(stack(gated), 1);
  pooled = pooled * nn::sigmoid(encoder_category(nn::constant(category)));
  return Posterior{mu_head(pooled), nn::clamp(log_var_head(pooled), -10.0, 10.0)};
}

Var LabelMapVae::decode(const Var& z, const Tensor& boxes, const Tensor& category) const {
  const int p = config_.p, m = config_.mask_resolution, hs = config_.sequence_hidden;
  MERO_CHECK(z.shape().size() == 2 && z.dim(1) == config_.latent, "decode_masks: z must be [B, latent]");
  const int b = z.dim(0);
  check_inputs(boxes, category, b);

  const std::vector<Var> hb = decoder_boxes(boxes);
  const Var pooled_boxes = nn::mean_axis(stack(hb), 1);
  const Var zc = z * nn::sigmoid(decoder_category(nn::constant(category)));
  const Var zg = nn::relu(latent_map(zc)) * pooled_boxes;
  std::vector<Var> steps;
  for (int k = 0; k < p; ++k) steps.push_back(nn::concat({zg, hb[k]}, 1));
  const std::vector<Var> rows = decoder_gru(steps);
  const Var logits = mask_decoder(nn::reshape(stack(rows), {b * p, hs}));
  // Two-class softmax over (background, foreground) equals a sigmoid of the
  // logit difference.
  const Var diff = nn::slice(logits, 1, 1, 1) - nn::slice(logits, 1, 0, 1);
  return nn::reshape(nn::sigmoid(diff), {b, p, m, m});
}

Var loss_masks(const Var& probs, const Tensor& target, const Tensor& presence) {
  MERO_CHECK(probs.shape() == target.shape() && probs.shape().size() == 4, "loss_masks: expects matching [B, p, m, m]");
  const int b = probs.dim(0), p = probs.dim(1), m2 = probs.dim(2) * probs.dim(3);
  MERO_CHECK(presence.shape() == (nn::Shape{b, p}), "loss_masks: presence must be [B, p]");
  Tensor weight({b, p});
  for (int i = 0; i < b; ++i) {
    double present = 0;
    for (int k = 0; k < p; ++k) present += presence.at(i, k);
    for (int k = 0; k < p; ++k)
      if (presence.at(i, k) != 0.0) weight.at(i, k) = 1.0 / present;
  }
  const Var bce = nn::reshape(nn::binary_cross_entropy(probs, target, box::kProbClamp), {b, p, m2});
  return nn::sum(nn::mean_axis(bce, 2) * nn::constant(weight)) * (1.0 / b);
}

MaskLosses mask_objective(const LabelMapVae& model, const MaskBatch& batch, double lambda, const Tensor& noise) {
  const Posterior post = model.encode(batch.masks, batch.boxes, batch.category);
  const Var z = box::reparameterize(post, noise);
  const Var probs = model.decode(z, batch.boxes, batch.category);
  MaskLosses l;
  l.reconstruction = loss_masks(probs, batch.masks, batch.presence);
  l.kl = box::kl_diag_gaussian(post);
  l.total = lambda == 0.0 ? l.reconstruction : l.reconstruction + l.kl * lambda;
  return l;
}

Tensor reconstruct_masks(const LabelMapVae& model, const MaskBatch& batch) {
  nn::NoGradGuard guard;
  const Posterior post = model.encode(batch.masks, batch.boxes, batch.category);
  return model.decode(post.mu, batch.boxes, batch.category).value();
}

std::vector<core::Mask> binarize(const Tensor& probs, int row) {
  const int p = probs.dim(1), m = probs.dim(2);
  std::vector<core::Mask> out;
  for (int k = 0; k < p; ++k) {
    core::Mask mask(m);
    const double* src = probs.data() + (static_cast<std::size_t>(row) * p + k) * m * m;
    for (int j = 0; j < m * m; ++j) mask.bits[j] = src[j] > 0.5 ? 1 : 0;
    out.push_back(std::move(mask));
  }
  return out;
}

Tensor decode_for_layout(const LabelMapVae& model, const core::PartGraph& layout, const Tensor& z) {
  const auto& cfg = model.config();
  MERO_CHECK(layout.p == cfg.p, "decode: layout slot count differs from the model");
  Tensor boxes({1, cfg.p, 4});
  for (int k : layout.present_slots()) {
    const auto& b = layout.boxes[k];
    boxes[k * 4 + 0] = b.x0, boxes[k * 4 + 1] = b.y0, boxes[k * 4 + 2] = b.x1, boxes[k * 4 + 3] = b.y1;
  }
  nn::NoGradGuard guard;
  return model.decode(nn::constant(z), boxes, box::one_hot({layout.category}, cfg.categories)).value();
}

LabelMap sample_label_map(const LabelMapVae& model, const core::PartGraph& layout, nn::Rng& rng, int canvas) {
  if (!model.ready()) throw ValidationError("sample_label_map: model has no trained or loaded weights");
  layout.validate();
  const Tensor probs = decode_for_layout(model, layout, rng.normal_tensor({1, model.config().latent}));
  std::vector<core::Mask> masks = binarize(probs, 0);
  for (int k = 0; k < layout.p; ++k)
    if (!layout.presence[k]) masks[k] = core::Mask{};
  return compose_label_map(masks, layout.boxes, layout.presence, layout.category, canvas);
}

void save_mask_model(const std::filesystem::path& path, LabelMapVae& model) {
  nn::save_checkpoint(path, kMaskCheckpointKind, model.config().to_json(), model);
}

LabelMapVae load_mask_model(const std::filesystem::path& path) {
  const nn::Checkpoint ck = nn::load_checkpoint(path);
  if (ck.kind != kMaskCheckpointKind)
    throw FormatError(path.string() + ": expected a " + kMaskCheckpointKind + " checkpoint, found " + ck.kind);
  MaskVaeConfig cfg;
  try {
    cfg = MaskVaeConfig::from_json(ck.config);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad config: " + e.what());
  }
  nn::Rng rng(0);
  LabelMapVae model(cfg, rng);
  ck.apply_to(model);
  model.set_ready(true);
  return model;
}

}  // namespace mero::mask

#include "mero/box/model.hpp"

#include <algorithm>
#include <cmath>

#include "mero/error.hpp"
#include "mero/nn/checkpoint.hpp"

namespace mero::box {

using nn::Tensor;
using nn::Var;

BoxVaeConfig BoxVaeConfig::for_schema(const core::Schema& schema) {
  BoxVaeConfig c;
  c.p = schema.p;
  c.categories = schema.category_count();
  for (const auto& cat : schema.categories) c.slot_masks.push_back(schema.slot_mask(cat.id));
  return c;
}

nlohmann::json BoxVaeConfig::to_json() const {
  return {{"p", p},
          {"categories", categories},
          {"gcn_widths", gcn_widths},
          {"readout", readout},
          {"latent", latent},
          {"hidden", hidden},
          {"encoder_conditioning", encoder_conditioning},
          {"slot_masks", slot_masks}};
}

BoxVaeConfig BoxVaeConfig::from_json(const nlohmann::json& j) {
  BoxVaeConfig c;
  c.p = j.at("p").get<int>();
  c.categories = j.at("categories").get<int>();
  c.gcn_widths = j.at("gcn_widths").get<std::vector<int>>();
  c.readout = j.at("readout").get<int>();
  c.latent = j.at("latent").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.encoder_conditioning = j.value("encoder_conditioning", true);
  c.slot_masks = j.at("slot_masks").get<std::vector<std::vector<std::uint8_t>>>();
  c.validate();
  return c;
}

void BoxVaeConfig::validate() const {
  MERO_CHECK(p > 0 && categories > 0, "box config: p and category count must be positive");
  MERO_CHECK(!gcn_widths.empty(), "box config: at least one GCN layer");
  for (int w : gcn_widths) MERO_CHECK(w > 0, "box config: GCN widths must be positive");
  MERO_CHECK(readout > 0 && latent > 0 && hidden > 0, "box config: sizes must be positive");
  MERO_CHECK(slot_masks.size() == static_cast<std::size_t>(categories), "box config: one slot mask per category");
  for (const auto& m : slot_masks) MERO_CHECK(m.size() == static_cast<std::size_t>(p), "box config: slot mask length");
}

Tensor one_hot(const std::vector<int>& ids, int count) {
  Tensor t({static_cast<int>(ids.size()), count});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= count)
      throw ValidationError("category index " + std::to_string(ids[i]) + " outside [0, " + std::to_string(count) +
                            ")");
    t.at(static_cast<int>(i), ids[i]) = 1.0;
  }
  return t;
}

BoxBatch make_box_batch(const std::vector<const core::ObjectSample*>& samples, const BoxVaeConfig& config) {
  const int b = static_cast<int>(samples.size()), p = config.p;
  MERO_CHECK(b > 0, "box batch: no samples");
  BoxBatch batch;
  batch.x = Tensor({b, p, 5});
  batch.adjacency = Tensor({b, p, p});
  batch.presence = Tensor({b, p});
  batch.boxes = Tensor({b, p, 4});
  std::vector<int> cats;
  for (int i = 0; i < b; ++i) {
    const auto& g = samples[i]->graph;
    MERO_CHECK(g.p == p, "box batch: sample slot count differs from the model");
    cats.push_back(g.category);
    const Tensor x = g.features();
    std::copy(x.storage().begin(), x.storage().end(), batch.x.data() + static_cast<std::size_t>(i) * p * 5);
    for (int s = 0; s < p; ++s) {
      batch.presence.at(i, s) = g.presence[s];
      const double* row = x.data() + s * 5;
      std::copy(row + 1, row + 5, batch.boxes.data() + (static_cast<std::size_t>(i) * p + s) * 4);
      for (int t = 0; t < p; ++t) batch.adjacency[(static_cast<std::size_t>(i) * p + s) * p + t] = g.edge(s, t);
    }
  }
  batch.category = one_hot(cats, config.categories);
  return batch;
}

Tensor normalized_adjacency(const Tensor& a) {
  MERO_CHECK(a.rank() == 2 || a.rank() == 3, "normalized_adjacency: expects [p, p] or [B, p, p]");
  const int p = a.dim(-1);
  MERO_CHECK(a.dim(-2) == p, "normalized_adjacency: matrix must be square");
  const int batches = a.rank() == 3 ? a.dim(0) : 1;
  Tensor out(a.shape());
  std::vector<double> inv_sqrt(static_cast<std::size_t>(p));
  for (int b = 0; b < batches; ++b) {
    const double* src = a.data() + static_cast<std::size_t>(b) * p * p;
    double* dst = out.data() + static_cast<std::size_t>(b) * p * p;
    for (int i = 0; i < p; ++i) {
      double deg = 1.0;  // self loop
      for (int j = 0; j < p; ++j) deg += (i == j) ? 0.0 : src[i * p + j];
      inv_sqrt[i] = 1.0 / std::sqrt(deg);
    }
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) dst[i * p + j] = ((i == j) ? 1.0 : src[i * p + j]) * inv_sqrt[i] * inv_sqrt[j];
  }
  return out;
}

Var gcn_layer(const Var& h, const Tensor& a_hat, const Var& w) {
  return nn::relu(nn::matmul(nn::constant(a_hat), nn::matmul(h, w)));
}

BoxGcnVae::BoxGcnVae(BoxVaeConfig config, nn::Rng& rng) : config_(std::move(config)) {
  config_.validate();
  const int p = config_.p, m = config_.categories;
  int fan_in = 5;
  for (int width : config_.gcn_widths) {
    const double bound = std::sqrt(6.0 / (fan_in + width));
    gcn_weights.push_back(nn::make_parameter(rng.uniform_tensor({fan_in, width}, -bound, bound)));
    fan_in = width;
  }
  readout = nn::Linear(p * fan_in, config_.readout, rng);
  encoder_gate = nn::Embedding(m, config_.readout, rng);
  skip = nn::Linear(4, config_.readout, rng);
  mu_head = nn::Linear(config_.readout, config_.latent, rng);
  log_var_head = nn::Linear(config_.readout, config_.latent, rng);
  decoder_gate = nn::Linear(m + p, config_.latent, rng);
  fc1 = nn::Linear(config_.latent + m + p, config_.hidden, rng);
  fc2 = nn::Linear(config_.hidden, config_.hidden, rng);
  presence_head = nn::Linear(config_.hidden, p, rng);
  box_head = nn::Linear(config_.hidden, p * 4, rng);
  adjacency_head = nn::Linear(config_.hidden, p * p, rng);
}

void BoxGcnVae::visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) {
  for (std::size_t i = 0; i < gcn_weights.size(); ++i)
    fn(nn::join_name(prefix, "gcn" + std::to_string(i) + ".weight"), gcn_weights[i]);
  readout.visit_parameters(nn::join_name(prefix, "readout"), fn);
  encoder_gate.visit_parameters(nn::join_name(prefix, "encoder_gate"), fn);
  skip.visit_parameters(nn::join_name(prefix, "skip"), fn);
  mu_head.visit_parameters(nn::join_name(prefix, "mu"), fn);
  log_var_head.visit_parameters(nn::join_name(prefix, "log_var"), fn);
  decoder_gate.visit_parameters(nn::join_name(prefix, "decoder_gate"), fn);
  fc1.visit_parameters(nn::join_name(prefix, "fc1"), fn);
  fc2.visit_parameters(nn::join_name(prefix, "fc2"), fn);
  presence_head.visit_parameters(nn::join_name(prefix, "presence"), fn);
  box_head.visit_parameters(nn::join_name(prefix, "boxes"), fn);
  adjacency_head.visit_parameters(nn::join_name(prefix, "adjacency"), fn);
}

void BoxGcnVae::check_category(const Tensor& category, int batch) const {
  MERO_CHECK(category.shape() == (nn::Shape{batch, config_.categories}),
             "box model: category must be one-hot [B, " + std::to_string(config_.categories) + "]");
  for (int i = 0; i < batch; ++i) {
    double total = 0.0;
    for (int c = 0; c < config_.categories; ++c) {
      const double v = category.at(i, c);
      MERO_CHECK(v == 0.0 || v == 1.0, "box model: category rows must be one-hot");
      total += v;
    }
    MERO_CHECK(total == 1.0, "box model: category rows must be one-hot");
  }
}

Posterior BoxGcnVae::encode(const Tensor& x, const Tensor& adjacency, const Tensor& category) const {
  const int p = config_.p;
  MERO_CHECK(x.rank() == 3 && x.dim(1) == p && x.dim(2) == 5, "encode: x must be [B, p, 5]");
  const int b = x.dim(0);
  MERO_CHECK(adjacency.shape() == (nn::Shape{b, p, p}), "encode: adjacency must be [B, p, p]");
  check_category(category, b);

  const Tensor a_hat = normalized_adjacency(adjacency);
  const Var xv = nn::constant(x);
  Var h = xv;
  for (const Var& w : gcn_weights) h = gcn_layer(h, a_hat, w);
  Var feat = nn::relu(readout(nn::reshape(h, {b, p * config_.gcn_widths.back()})));
  if (config_.encoder_conditioning) feat = feat * nn::sigmoid(encoder_gate(nn::constant(category)));
  // Skip path: a shared 4 -> readout map applied to every slot's box, then
  // averaged over slots.
  feat = feat + nn::mean_axis(skip(nn::slice(xv, 2, 1, 4)), 1);
  return Posterior{mu_head(feat), nn::clamp(log_var_head(feat), -10.0, 10.0)};
}

LayoutDecode BoxGcnVae::decode(const Var& z, const Tensor& category, const Tensor& part_list) const {
  const int p = config_.p;
  MERO_CHECK(z.shape().size() == 2 && z.dim(1) == config_.latent, "decode: z must be [B, latent]");
  const int b = z.dim(0);
  check_category(category, b);
  MERO_CHECK(part_list.shape() == (nn::Shape{b, p}), "decode: part list must be [B, p]");
  for (int i = 0; i < b; ++i) {
    int c = 0;
    while (category.at(i, c) != 1.0) ++c;
    for (int s = 0; s < p; ++s) {
      const double v = part_list.at(i, s);
      MERO_CHECK(v == 0.0 || v == 1.0, "decode: part list must be 0/1");
      if (v == 1.0 && !config_.slot_masks[c][s])
        throw ValidationError("decode: slot " + std::to_string(s) + " is not a part of category " +
                              std::to_string(c));
    }
  }
  const Var cond = nn::concat({nn::constant(category), nn::constant(part_list)}, 1);
  const Var zg = z * nn::sigmoid(decoder_gate(cond));
  Var h = nn::relu(fc1(nn::concat({zg, cond}, 1)));
  h = nn::relu(fc2(h));
  LayoutDecode out;
  out.presence = nn::sigmoid(presence_head(h));
  out.boxes = nn::reshape(nn::sigmoid(box_head(h)), {b, p, 4});
  const Var adj = nn::sigmoid(nn::reshape(adjacency_head(h), {b, p, p}));
  out.adjacency = (adj + nn::transpose(adj)) * 0.5;
  return out;
}

BoxLosses box_objective(const BoxGcnVae& model, const BoxBatch& batch, double lambda, const Tensor& noise) {
  const Posterior post = model.encode(batch.x, batch.adjacency, batch.category);
  const Var z = reparameterize(post, noise);
  const LayoutDecode out = model.decode(z, batch.category, batch.presence);
  BoxLosses l;
  l.presence = loss_presence(out.presence, batch.presence);
  l.box = loss_box(out.boxes, batch.boxes, batch.presence);
  l.adjacency = loss_adjacency(out.adjacency, batch.adjacency);
  l.kl = kl_diag_gaussian(post);
  l.reconstruction = l.presence + l.box + l.adjacency;
  l.total = lambda == 0.0 ? l.reconstruction : l.reconstruction + l.kl * lambda;
  return l;
}

LayoutDecode reconstruct(const BoxGcnVae& model, const BoxBatch& batch) {
  nn::NoGradGuard guard;
  const Posterior post = model.encode(batch.x, batch.adjacency, batch.category);
  return model.decode(post.mu, batch.category, batch.presence);
}

core::PartGraph layout_from_decode(const LayoutDecode& out, int row, int category,
                                   const std::vector<std::uint8_t>& part_list, PresenceRule rule) {
  const int p = out.presence.dim(1);
  core::PartGraph g(p, category);
  const Tensor& pres = out.presence.value();
  const Tensor& boxes = out.boxes.value();
  const Tensor& adj = out.adjacency.value();
  for (int s = 0; s < p; ++s) {
    const bool keep = rule == PresenceRule::requested || pres.at(row, s) > 0.5;
    if (!(keep && part_list[s])) continue;
    g.presence[s] = 1;
    const double* b = boxes.data() + (static_cast<std::size_t>(row) * p + s) * 4;
    g.boxes[s] = core::clamp_unit(
        core::Box{std::min(b[0], b[2]), std::min(b[1], b[3]), std::max(b[0], b[2]), std::max(b[1], b[3])});
  }
  for (int s = 0; s < p; ++s)
    for (int t = s + 1; t < p; ++t)
      if (g.presence[s] && g.presence[t] && adj[(static_cast<std::size_t>(row) * p + s) * p + t] > 0.5)
        g.set_edge(s, t, true);
  return g;
}

core::PartGraph sample_layout(const BoxGcnVae& model, int category, const std::vector<std::uint8_t>& part_list,
                              nn::Rng& rng, PresenceRule rule) {
  if (!model.ready()) throw ValidationError("sample_layout: model has no trained or loaded weights");
  const auto& cfg = model.config();
  MERO_CHECK(part_list.size() == static_cast<std::size_t>(cfg.p), "sample_layout: part list must have p entries");
  nn::NoGradGuard guard;
  const Tensor cat = one_hot({category}, cfg.categories);
  Tensor parts({1, cfg.p});
  for (int s = 0; s < cfg.p; ++s) parts[s] = part_list[s];
  const Var z = nn::constant(rng.normal_tensor({1, cfg.latent}));
  const LayoutDecode out = model.decode(z, cat, parts);
  core::PartGraph g = layout_from_decode(out, 0, category, part_list, rule);
  g.validate();
  return g;
}

void save_box_model(const std::filesystem::path& path, BoxGcnVae& model) {
  nn::save_checkpoint(path, kBoxCheckpointKind, model.config().to_json(), model);
}

BoxGcnVae load_box_model(const std::filesystem::path& path) {
  const nn::Checkpoint ck = nn::load_checkpoint(path);
  if (ck.kind != kBoxCheckpointKind)
    throw FormatError(path.string() + ": expected a " + kBoxCheckpointKind + " checkpoint, found " + ck.kind);
  BoxVaeConfig cfg;
  try {
    cfg = BoxVaeConfig::from_json(ck.config);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad config: " + e.what());
  }
  nn::Rng rng(0);
  BoxGcnVae model(cfg, rng);
  ck.apply_to(model);
  model.set_ready(true);
  return model;
}

}  // namespace mero::box

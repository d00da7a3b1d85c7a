#include "mero/translate/model.hpp"

#include <algorithm>
#include <cmath>

#include "mero/box/model.hpp"
#include "mero/error.hpp"
#include "mero/nn/checkpoint.hpp"

namespace mero::translate {

using nn::Tensor;
using nn::Var;

TranslatorConfig TranslatorConfig::for_schema(int p, int categories) {
  TranslatorConfig c;
  c.p = p;
  c.categories = categories;
  return c;
}

TranslatorConfig TranslatorConfig::desk(int p, int categories) {
  TranslatorConfig c = for_schema(p, categories);
  c.generator_channels = {32, 32, 32, 32, 24, 16, 12};
  c.spade_hidden = 16;
  c.disc_channels = 12;
  c.perceptual_channels = {8, 16, 16};
  return c;
}

bool TranslatorConfig::upsample_after(int block) const {
  // One upsampling after the head block, the rest after the middle pair.
  if (upsamples == 0) return false;
  if (block == 0) return true;
  return block >= 2 && block < 2 + upsamples - 1;
}

nlohmann::json TranslatorConfig::to_json() const {
  return {{"p", p},
          {"categories", categories},
          {"resolution", resolution},
          {"embedding", embedding},
          {"category_planes", category_planes},
          {"generator_channels", generator_channels},
          {"spade_hidden", spade_hidden},
          {"upsamples", upsamples},
          {"disc_channels", disc_channels},
          {"disc_scales", disc_scales},
          {"perceptual_channels", perceptual_channels},
          {"perceptual_seed", perceptual_seed},
          {"disc_feature_weight", disc_feature_weight},
          {"perceptual_weight", perceptual_weight}};
}

TranslatorConfig TranslatorConfig::from_json(const nlohmann::json& j) {
  TranslatorConfig c;
  c.p = j.at("p").get<int>();
  c.categories = j.at("categories").get<int>();
  c.resolution = j.at("resolution").get<int>();
  c.embedding = j.at("embedding").get<int>();
  c.category_planes = j.at("category_planes").get<int>();
  c.generator_channels = j.at("generator_channels").get<std::vector<int>>();
  c.spade_hidden = j.at("spade_hidden").get<int>();
  c.upsamples = j.at("upsamples").get<int>();
  c.disc_channels = j.at("disc_channels").get<int>();
  c.disc_scales = j.at("disc_scales").get<int>();
  c.perceptual_channels = j.at("perceptual_channels").get<std::vector<int>>();
  c.perceptual_seed = j.at("perceptual_seed").get<std::uint64_t>();
  c.disc_feature_weight = j.at("disc_feature_weight").get<double>();
  c.perceptual_weight = j.at("perceptual_weight").get<double>();
  c.validate();
  return c;
}

void TranslatorConfig::validate() const {
  MERO_CHECK(p > 0 && categories > 0, "translator config: p and category count must be positive");
  MERO_CHECK(generator_channels.size() == 7, "translator config: the generator has exactly 7 SPADE blocks");
  for (int c : generator_channels) MERO_CHECK(c > 0, "translator config: channel widths must be positive");
  MERO_CHECK(upsamples >= 0 && upsamples <= 6, "translator config: upsamples must be in [0, 6]");
  MERO_CHECK(resolution > 0 && base_resolution() > 0 && (base_resolution() << upsamples) == resolution,
             "translator config: resolution must be divisible by 2^upsamples");
  MERO_CHECK(embedding > 0 && category_planes > 0 && spade_hidden > 0 && disc_channels > 0,
             "translator config: sizes must be positive");
  MERO_CHECK(disc_scales >= 1 && (resolution >> (disc_scales + 1)) >= 1,
             "translator config: too many discriminator scales for the resolution");
  MERO_CHECK(!perceptual_channels.empty(), "translator config: perceptual network needs at least one layer");
}

namespace {

void check_label_map(const Tensor& label_map, const TranslatorConfig& c) {
  MERO_CHECK(label_map.rank() == 4 && label_map.dim(1) == c.p && label_map.dim(2) == c.resolution &&
                 label_map.dim(3) == c.resolution,
             "translator: label map must be [B, p, H, W] at the configured resolution");
  const int b = label_map.dim(0), p = c.p;
  const std::size_t plane = static_cast<std::size_t>(c.resolution) * c.resolution;
  for (int i = 0; i < b; ++i) {
    const double* base = label_map.data() + static_cast<std::size_t>(i) * p * plane;
    for (std::size_t j = 0; j < plane; ++j) {
      double s = 0;
      for (int k = 0; k < p; ++k) {
        const double v = base[k * plane + j];
        if (v != 0.0 && v != 1.0) throw ValidationError("translator: label map is not one-hot");
        s += v;
      }
      if (s > 1.0) throw ValidationError("translator: label map has overlapping channels");
    }
  }
}

void check_category(const Tensor& category, int batch, int categories) {
  MERO_CHECK(category.shape() == (nn::Shape{batch, categories}), "translator: category must be [B, M]");
}

Var conditioning(const Tensor& label_map, const Var& planes, int size) {
  const Tensor resized =
      label_map.dim(2) == size ? label_map : nn::resize_nearest(label_map, size, size);
  return nn::concat({nn::constant(resized), nn::broadcast_spatial(planes, size, size)}, 1);
}

}  // namespace

CategoryPlanes::CategoryPlanes(int categories, int embedding, int planes, nn::Rng& rng)
    : table(categories, embedding, rng), to_planes(embedding, planes, rng) {}

Var CategoryPlanes::operator()(const Tensor& category) const { return to_planes(table(nn::constant(category))); }

void CategoryPlanes::visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) {
  table.visit_parameters(nn::join_name(prefix, "embedding"), fn);
  to_planes.visit_parameters(nn::join_name(prefix, "to_planes"), fn);
}

SpadeNorm::SpadeNorm(int channels, int cond_channels, int hidden, nn::Rng& rng)
    : shared(cond_channels, hidden, 3, 1, 1, rng),
      gamma(hidden, channels, 3, 1, 1, rng),
      beta(hidden, channels, 3, 1, 1, rng) {}

Var SpadeNorm::operator()(const Var& x, const Var& cond) const {
  const Var h = nn::relu(shared(cond));
  return nn::spade_modulate(nn::instance_norm(x), gamma(h), beta(h));
}

void SpadeNorm::visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) {
  shared.visit_parameters(nn::join_name(prefix, "shared"), fn);
  gamma.visit_parameters(nn::join_name(prefix, "gamma"), fn);
  beta.visit_parameters(nn::join_name(prefix, "beta"), fn);
}

SpadeResBlock::SpadeResBlock(int in, int out, int cond_channels, int hidden, nn::Rng& rng)
    : learned_skip(in != out) {
  const int mid = std::min(in, out);
  norm0 = SpadeNorm(in, cond_channels, hidden, rng);
  conv0 = nn::Conv2d(in, mid, 3, 1, 1, rng);
  norm1 = SpadeNorm(mid, cond_channels, hidden, rng);
  conv1 = nn::Conv2d(mid, out, 3, 1, 1, rng);
  if (learned_skip) {
    norm_skip = SpadeNorm(in, cond_channels, hidden, rng);
    conv_skip = nn::Conv2d(in, out, 1, 1, 0, rng, false);
  }
}

Var SpadeResBlock::operator()(const Var& x, const Var& cond) const {
  const Var skip = learned_skip ? conv_skip(norm_skip(x, cond)) : x;
  Var h = conv0(nn::leaky_relu(norm0(x, cond), 0.2));
  h = conv1(nn::leaky_relu(norm1(h, cond), 0.2));
  return skip + h;
}

void SpadeResBlock::visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) {
  norm0.visit_parameters(nn::join_name(prefix, "norm0"), fn);
  conv0.visit_parameters(nn::join_name(prefix, "conv0"), fn);
  norm1.visit_parameters(nn::join_name(prefix, "norm1"), fn);
  conv1.visit_parameters(nn::join_name(prefix, "conv1"), fn);
  if (learned_skip) {
    norm_skip.visit_parameters(nn::join_name(prefix, "norm_skip"), fn);
    conv_skip.visit_parameters(nn::join_name(prefix, "conv_skip"), fn);
  }
}

Generator::Generator(const TranslatorConfig& config, nn::Rng& rng) : config_(config) {
  config_.validate();
  const int cond = config_.p + config_.category_planes;
  const auto& ch = config_.generator_channels;
  category_planes = CategoryPlanes(config_.categories, config_.embedding, config_.category_planes, rng);
  head = nn::Conv2d(cond, ch[0], 3, 1, 1, rng);
  for (std::size_t i = 0; i < ch.size(); ++i) {
    const int in = ch[i == 0 ? 0 : i - 1];
    blocks.emplace_back(in, ch[i], cond, config_.spade_hidden, rng);
  }
  to_rgb = nn::Conv2d(ch.back(), 3, 3, 1, 1, rng);
}

Var Generator::operator()(const Tensor& label_map, const Tensor& category) const {
  check_label_map(label_map, config_);
  check_category(category, label_map.dim(0), config_.categories);
  const Var planes = category_planes(category);
  int size = config_.base_resolution();
  Var x = head(conditioning(label_map, planes, size));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    x = blocks[i](x, conditioning(label_map, planes, size));
    if (config_.upsample_after(static_cast<int>(i))) {
      x = nn::upsample_nearest(x, 2);
      size *= 2;
    }
  }
  return nn::tanh(to_rgb(nn::leaky_relu(x, 0.2)));
}

void Generator::visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) {
  category_planes.visit_parameters(nn::join_name(prefix, "category"), fn);
  head.visit_parameters(nn::join_name(prefix, "head"), fn);
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].visit_parameters(nn::join_name(prefix, "block" + std::to_string(i)), fn);
  to_rgb.visit_parameters(nn::join_name(prefix, "to_rgb"), fn);
}

Discriminator::Discriminator(const TranslatorConfig& config, nn::Rng& rng) : config_(config) {
  config_.validate();
  category_planes = CategoryPlanes(config_.categories, config_.embedding, config_.category_planes, rng);
  const int in = config_.p + 3 + config_.category_planes, nf = config_.disc_channels;
  for (int s = 0; s < config_.disc_scales; ++s) {
    std::vector<nn::Conv2d> layers;
    layers.emplace_back(in, nf, 4, 2, 1, rng);
    layers.emplace_back(nf, 2 * nf, 4, 2, 1, rng);
    layers.emplace_back(2 * nf, 4 * nf, 3, 1, 1, rng);
    layers.emplace_back(4 * nf, 1, 3, 1, 1, rng);
    scales.push_back(std::move(layers));
  }
}

DiscriminatorOutput Discriminator::operator()(const Tensor& label_map, const Var& image,
                                              const Tensor& category) const {
  const int b = label_map.dim(0), r = config_.resolution;
  MERO_CHECK(label_map.shape() == (nn::Shape{b, config_.p, r, r}),
             "discriminator: label map must be [B, p, H, W] at the configured resolution");
  MERO_CHECK(image.shape() == (nn::Shape{b, 3, r, r}), "discriminator: image must be [B, 3, H, W]");
  check_category(category, b, config_.categories);
  const Var planes = category_planes(category);
  Var input = nn::concat({nn::constant(label_map), image, nn::broadcast_spatial(planes, r, r)}, 1);
  DiscriminatorOutput out;
  for (int s = 0; s < config_.disc_scales; ++s) {
    if (s > 0) input = nn::avg_pool(input, 2);
    const auto& layers = scales[s];
    std::vector<Var> feats;
    Var h = nn::leaky_relu(layers[0](input), 0.2);
    feats.push_back(h);
    for (std::size_t l = 1; l + 1 < layers.size(); ++l) {
      h = nn::leaky_relu(nn::instance_norm(layers[l](h)), 0.2);
      feats.push_back(h);
    }
    out.scores.push_back(layers.back()(h));
    out.features.push_back(std::move(feats));
  }
  return out;
}

void Discriminator::visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) {
  category_planes.visit_parameters(nn::join_name(prefix, "category"), fn);
  for (std::size_t s = 0; s < scales.size(); ++s)
    for (std::size_t l = 0; l < scales[s].size(); ++l)
      scales[s][l].visit_parameters(
          nn::join_name(prefix, "scale" + std::to_string(s) + ".conv" + std::to_string(l)), fn);
}

PerceptualNet::PerceptualNet(const std::vector<int>& channels, std::uint64_t seed) {
  nn::Rng rng(seed);
  int in = 3;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const int out = channels[i];
    Tensor w = rng.normal_tensor({out, in, 3, 3});
    const double scale = std::sqrt(2.0 / (in * 9));
    for (double& v : w.storage()) v *= scale;
    weights_.push_back(nn::constant(w));
    strides_.push_back(i == 0 ? 1 : 2);
    in = out;
  }
}

std::vector<Var> PerceptualNet::features(const Var& image) const {
  std::vector<Var> feats;
  Var h = image;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = nn::relu(nn::conv2d(h, weights_[i], Var(), strides_[i], 1));
    feats.push_back(h);
  }
  return feats;
}

Translator::Translator(TranslatorConfig config, nn::Rng& rng)
    : generator(config, rng),
      discriminator(config, rng),
      perceptual(config.perceptual_channels, config.perceptual_seed),
      config_(std::move(config)) {}

void Translator::visit_parameters(const std::string& prefix, const nn::ParamVisitor& fn) {
  generator.visit_parameters(nn::join_name(prefix, "generator"), fn);
  discriminator.visit_parameters(nn::join_name(prefix, "discriminator"), fn);
}

Var loss_discriminator(const std::vector<Var>& real_scores, const std::vector<Var>& fake_scores) {
  MERO_CHECK(!real_scores.empty() && real_scores.size() == fake_scores.size(),
             "loss_discriminator: need matching non-empty score lists");
  Var total;
  for (std::size_t s = 0; s < real_scores.size(); ++s) {
    const Var term = nn::mean(nn::relu(-real_scores[s] + 1.0)) + nn::mean(nn::relu(fake_scores[s] + 1.0));
    total = s == 0 ? term : total + term;
  }
  return total * (1.0 / static_cast<double>(real_scores.size()));
}

Var adversarial_generator_term(const std::vector<Var>& fake_scores) {
  MERO_CHECK(!fake_scores.empty(), "adversarial term: no scores");
  Var total;
  for (std::size_t s = 0; s < fake_scores.size(); ++s) {
    const Var term = nn::mean(fake_scores[s]);
    total = s == 0 ? term : total + term;
  }
  return total * (-1.0 / static_cast<double>(fake_scores.size()));
}

Var feature_matching(const std::vector<Var>& real, const std::vector<Var>& fake) {
  MERO_CHECK(!real.empty() && real.size() == fake.size(), "feature matching: need matching non-empty lists");
  Var total;
  for (std::size_t i = 0; i < real.size(); ++i) {
    const Var term = nn::l1_loss(fake[i], nn::detach(real[i]));
    total = i == 0 ? term : total + term;
  }
  return total * (1.0 / static_cast<double>(real.size()));
}

GeneratorLosses loss_generator(const std::vector<Var>& fake_scores, const std::vector<Var>& real_disc_features,
                               const std::vector<Var>& fake_disc_features, const std::vector<Var>& real_perceptual,
                               const std::vector<Var>& fake_perceptual, double disc_weight,
                               double perceptual_weight) {
  GeneratorLosses l;
  l.adversarial = adversarial_generator_term(fake_scores);
  l.disc_features = feature_matching(real_disc_features, fake_disc_features);
  l.perceptual = feature_matching(real_perceptual, fake_perceptual);
  l.total = l.adversarial + l.disc_features * disc_weight + l.perceptual * perceptual_weight;
  return l;
}

Tensor image_to_tensor(const core::Raster& image) {
  MERO_CHECK(image.channels == 3, "image_to_tensor: expected an RGB raster");
  const int h = image.height, w = image.width;
  Tensor t({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t[(static_cast<std::size_t>(c) * h + y) * w + x] = image.at(y, x, c) / 127.5 - 1.0;
  return t;
}

core::Raster tensor_to_image(const Tensor& images, int row) {
  MERO_CHECK(images.rank() == 4 && images.dim(1) == 3, "tensor_to_image: expected [B, 3, H, W]");
  const int h = images.dim(2), w = images.dim(3);
  core::Raster r(w, h, 3);
  const double* src = images.data() + static_cast<std::size_t>(row) * 3 * h * w;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = std::clamp(src[(static_cast<std::size_t>(c) * h + y) * w + x], -1.0, 1.0);
        r.at(y, x, c) = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
      }
  return r;
}

TranslatorBatch make_translator_batch(const std::vector<const core::ObjectSample*>& samples,
                                      const TranslatorConfig& config) {
  const int b = static_cast<int>(samples.size()), p = config.p, r = config.resolution;
  MERO_CHECK(b > 0, "translator batch: no samples");
  TranslatorBatch batch;
  batch.label_maps = Tensor({b, p, r, r});
  batch.images = Tensor({b, 3, r, r});
  std::vector<int> cats;
  const std::size_t lm_size = static_cast<std::size_t>(p) * r * r, im_size = 3ull * r * r;
  for (int i = 0; i < b; ++i) {
    const auto& s = *samples[i];
    MERO_CHECK(s.graph.p == p, "translator batch: sample slot count differs from the model");
    if (!s.image) throw ValidationError("translator batch: sample " + s.id + " has no image");
    MERO_CHECK(s.image->width == r && s.image->height == r, "translator batch: image size differs from the model");
    const Tensor lm = mask::label_map_of(s, r).one_hot();
    std::copy(lm.data(), lm.data() + lm_size, batch.label_maps.data() + i * lm_size);
    const Tensor im = image_to_tensor(*s.image);
    std::copy(im.data(), im.data() + im_size, batch.images.data() + i * im_size);
    cats.push_back(s.category());
  }
  batch.category = box::one_hot(cats, config.categories);
  return batch;
}

core::Raster render_sprite(const Translator& model, const mask::LabelMap& map) {
  if (!model.ready()) throw ValidationError("render_sprite: model has no trained or loaded weights");
  const auto& cfg = model.config();
  MERO_CHECK(map.p == cfg.p, "render_sprite: label map slot count differs from the model");
  MERO_CHECK(map.canvas.width == cfg.resolution && map.canvas.height == cfg.resolution,
             "render_sprite: label map size differs from the model resolution");
  nn::NoGradGuard guard;
  const Var img = model.generator(map.one_hot(), box::one_hot({map.category}, cfg.categories));
  return tensor_to_image(img.value(), 0);
}

void save_translator(const std::filesystem::path& path, Translator& model) {
  nn::save_checkpoint(path, kTranslatorCheckpointKind, model.config().to_json(), model);
}

Translator load_translator(const std::filesystem::path& path) {
  const nn::Checkpoint ck = nn::load_checkpoint(path);
  if (ck.kind != kTranslatorCheckpointKind)
    throw FormatError(path.string() + ": expected a " + kTranslatorCheckpointKind + " checkpoint, found " + ck.kind);
  TranslatorConfig cfg;
  try {
    cfg = TranslatorConfig::from_json(ck.config);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad config: " + e.what());
  }
  nn::Rng rng(0);
  Translator model(cfg, rng);
  ck.apply_to(model);
  model.set_ready(true);
  return model;
}

}  // namespace mero::translate

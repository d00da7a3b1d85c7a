#include "mero/eval/extractor.hpp"

#include <cmath>

#include "mero/error.hpp"
#include "mero/nn/checkpoint.hpp"
#include "mero/nn/ops.hpp"
#include "mero/nn/rng.hpp"

namespace mero::eval {

ConvFeatureExtractor::ConvFeatureExtractor(std::string id, std::vector<Layer> layers, int input_size)
    : id_(std::move(id)), layers_(std::move(layers)), input_size_(input_size) {
  MERO_CHECK(!layers_.empty(), "extractor: no layers");
  MERO_CHECK(input_size_ > 0, "extractor: input size must be positive");
  int in = 3;
  for (const auto& l : layers_) {
    MERO_CHECK(l.weight.rank() == 4 && l.weight.dim(1) == in && l.weight.dim(2) == 3 && l.weight.dim(3) == 3,
               "extractor: layer weights must be [out, in, 3, 3] and chain");
    MERO_CHECK(l.bias.rank() == 1 && l.bias.dim(0) == l.weight.dim(0), "extractor: bias must match out channels");
    MERO_CHECK(l.stride >= 1, "extractor: stride must be positive");
    in = l.weight.dim(0);
  }
}

int ConvFeatureExtractor::dim() const { return layers_.back().weight.dim(0); }

Eigen::MatrixXd ConvFeatureExtractor::extract(const std::vector<core::Raster>& images) const {
  const int n = static_cast<int>(images.size()), s = input_size_;
  Eigen::MatrixXd out(n, dim());
  if (n == 0) return out;
  nn::Tensor batch({n, 3, s, s});
  for (int i = 0; i < n; ++i) {
    const core::Raster& img = images[i];
    MERO_CHECK(img.channels == 3, "extractor: images must be RGB");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const int sy = std::min(img.height - 1, y * img.height / s);
          const int sx = std::min(img.width - 1, x * img.width / s);
          batch[((static_cast<std::size_t>(i) * 3 + c) * s + y) * s + x] = img.at(sy, sx, c) / 127.5 - 1.0;
        }
  }
  nn::NoGradGuard guard;
  nn::Var h = nn::constant(batch);
  for (const auto& l : layers_) h = nn::relu(nn::conv2d(h, nn::constant(l.weight), nn::constant(l.bias), l.stride, 1));
  const nn::Tensor pooled = nn::mean_axis(nn::reshape(h, {n, h.dim(1), h.dim(2) * h.dim(3)}), 2).value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim(); ++j) out(i, j) = pooled[static_cast<std::size_t>(i) * dim() + j];
  return out;
}

std::unique_ptr<FeatureExtractor> make_test_extractor(std::uint64_t seed, int input_size) {
  nn::Rng rng(seed);
  std::vector<ConvFeatureExtractor::Layer> layers;
  int in = 3;
  for (int out : {8, 16, 16}) {
    ConvFeatureExtractor::Layer l;
    l.weight = rng.normal_tensor({out, in, 3, 3});
    const double scale = std::sqrt(2.0 / (in * 9));
    for (double& v : l.weight.storage()) v *= scale;
    l.bias = rng.uniform_tensor({out}, -0.1, 0.1);
    l.stride = 2;
    layers.push_back(std::move(l));
    in = out;
  }
  return std::make_unique<ConvFeatureExtractor>("random-cnn-" + std::to_string(seed) + "-" + std::to_string(input_size),
                                                std::move(layers), input_size);
}

std::unique_ptr<FeatureExtractor> load_extractor(const std::filesystem::path& path) {
  const nn::Checkpoint ck = nn::load_checkpoint(path);
  if (ck.kind != "feature_extractor")
    throw FormatError(path.string() + ": expected a feature_extractor checkpoint, found " + ck.kind);
  std::vector<ConvFeatureExtractor::Layer> layers;
  try {
    const auto strides = ck.config.at("strides").get<std::vector<int>>();
    for (std::size_t i = 0; i < strides.size(); ++i) {
      const std::string base = "layer" + std::to_string(i);
      const auto w = ck.tensors.find(base + ".weight"), b = ck.tensors.find(base + ".bias");
      if (w == ck.tensors.end() || b == ck.tensors.end()) throw FormatError(path.string() + ": missing " + base);
      layers.push_back({w->second, b->second, strides[i]});
    }
    return std::make_unique<ConvFeatureExtractor>(ck.config.value("id", path.stem().string()), std::move(layers),
                                                  ck.config.at("input_size").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad extractor config: " + e.what());
  }
}

}  // namespace mero::eval

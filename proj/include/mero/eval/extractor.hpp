#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mero/core/raster.hpp"
#include "mero/nn/autograd.hpp"

namespace mero::eval {

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  virtual int dim() const = 0;
  // One row per image; images are 8-bit RGB, any size.
  virtual Eigen::MatrixXd extract(const std::vector<core::Raster>& images) const = 0;
};

// Convolution stack (3x3, relu) followed by global average pooling. Images
// are resized to input_size and scaled to [-1, 1].
class ConvFeatureExtractor : public FeatureExtractor {
 public:
  struct Layer {
    nn::Tensor weight;  // [out, in, 3, 3]
    nn::Tensor bias;    // [out]
    int stride = 1;
  };
  ConvFeatureExtractor(std::string id, std::vector<Layer> layers, int input_size);

  std::string id() const override { return id_; }
  int dim() const override;
  Eigen::MatrixXd extract(const std::vector<core::Raster>& images) const override;

 private:
  std::string id_;
  std::vector<Layer> layers_;
  int input_size_;
};

// Fixed random-weight CNN for desk-scale runs and tests; id records the seed.
std::unique_ptr<FeatureExtractor> make_test_extractor(std::uint64_t seed = 7, int input_size = 64);

// Pretrained weights converted into a checkpoint of kind "feature_extractor"
// whose config is {"input_size": n, "strides": [...]} and whose tensors are
// layer<i>.weight / layer<i>.bias.
std::unique_ptr<FeatureExtractor> load_extractor(const std::filesystem::path& checkpoint);

}  // namespace mero::eval

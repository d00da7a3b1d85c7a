#include "mero/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "mero/error.hpp"

namespace mero::nn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    MERO_CHECK(d >= 0, "negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  MERO_CHECK(data_.size() == shape_numel(shape_),
             "tensor value count " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

double Tensor::item() const {
  MERO_CHECK(data_.size() == 1, "item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  MERO_CHECK(shape_numel(shape) == data_.size(),
             "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  MERO_CHECK(a.shape() == b.shape(), "max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.storage().begin(), t.storage().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace mero::nn

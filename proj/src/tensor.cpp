#include "evx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "evx/error.hpp"

namespace evx {

std::size_t element_count(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != element_count(shape_)) {
    fail(ErrorCode::ShapeMismatch, "tensor of shape " + shape_string(shape_) +
                                       " cannot hold " +
                                       std::to_string(data_.size()) + " values");
  }
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    fail(ErrorCode::ShapeMismatch, "cannot reshape " + shape_string(shape_) +
                                       " to " + shape_string(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

Tensor Tensor::item(std::size_t index) const {
  if (shape_.empty() || index >= shape_[0]) {
    fail(ErrorCode::ShapeMismatch, "item index out of range for " + shape_string(shape_));
  }
  Shape s = shape_;
  s[0] = 1;
  const std::size_t stride = element_count(s);
  Tensor out(s);
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(index * stride), stride,
              out.data_.begin());
  return out;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double Tensor::min() const {
  if (data_.empty()) fail(ErrorCode::ShapeMismatch, "min of empty tensor");
  return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
  if (data_.empty()) fail(ErrorCode::ShapeMismatch, "max of empty tensor");
  return *std::max_element(data_.begin(), data_.end());
}

}  // namespace evx

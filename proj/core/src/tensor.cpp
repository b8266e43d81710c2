#include "updown/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace updown {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw std::invalid_argument("tensor: shape " + shape_string(shape_) + " holds " +
                                std::to_string(shape_size(shape_)) + " values, got " +
                                std::to_string(data_.size()));
  }
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::rows(std::initializer_list<std::initializer_list<double>> values) {
  const std::size_t r = values.size();
  const std::size_t c = r ? values.begin()->size() : 0;
  std::vector<double> flat;
  flat.reserve(r * c);
  for (const auto& row : values) {
    if (row.size() != c) throw std::invalid_argument("tensor: ragged rows");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(flat));
}

std::size_t Tensor::num_rows() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return 1;
  return shape_[0];
}

std::size_t Tensor::num_cols() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return shape_[0];
  return data_.size() / (shape_[0] ? shape_[0] : 1);
}

std::span<double> Tensor::row_span(std::size_t r) & {
  const std::size_t c = num_cols();
  return {data_.data() + r * c, c};
}

std::span<const double> Tensor::row_span(std::size_t r) const& {
  const std::size_t c = num_cols();
  return {data_.data() + r * c, c};
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace updown

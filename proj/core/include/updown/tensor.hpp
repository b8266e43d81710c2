#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace updown {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Graph operations treat every tensor as a matrix: rank-1 tensors are
/// viewed as a single row, rank-2 as rows x cols. Higher ranks are only
/// stored and serialized.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor row(std::vector<double> values);
  static Tensor rows(std::initializer_list<std::initializer_list<double>> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t num_rows() const;
  std::size_t num_cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() & { return data_; }
  std::span<const double> values() const& { return data_; }
  // A span into a temporary dangles once the full expression ends.
  void values() && = delete;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * num_cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * num_cols() + c]; }

  std::span<double> row_span(std::size_t r) &;
  std::span<const double> row_span(std::size_t r) const&;
  void row_span(std::size_t r) && = delete;

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace updown

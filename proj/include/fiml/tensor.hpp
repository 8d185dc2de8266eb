#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "fiml/common.hpp"

namespace fiml {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. A rank-0 tensor (empty shape) holds one scalar.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<real> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, real value);
  static Tensor scalar(real value);
  static Tensor vector(std::initializer_list<real> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<real> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const real> data() const { return data_; }
  std::span<real> mutable_data() { return data_; }

  real operator[](std::size_t i) const { return data_[i]; }
  real& operator[](std::size_t i) { return data_[i]; }

  real at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  real& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }

  real item() const;
  bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }
  bool all_finite() const;

  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<real> data_;
};

// Throws NumericError naming `where` if any entry is NaN or infinite.
void require_finite(const Tensor& t, const char* where);

}  // namespace fiml

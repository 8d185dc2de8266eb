#include "fiml/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace fiml {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : data_(1, real{0}) {}

Tensor::Tensor(Shape shape, std::vector<real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), real{0}); }

Tensor Tensor::full(Shape shape, real value) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<real>(n, value));
}

Tensor Tensor::scalar(real value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::initializer_list<real> values) {
  return Tensor({values.size()}, std::vector<real>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<real> values) {
  return Tensor({rows, cols}, std::vector<real>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

real Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (real x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void require_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + where);
  }
}

}  // namespace fiml

#include "rehar/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

#include "rehar/error.hpp"

namespace rehar {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimension must be positive: " + shape_to_string(shape_));
  data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimension must be positive: " + shape_to_string(shape_));
  if (values.size() != shape_size(shape_))
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_to_string(shape_));
  data_ = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_to_string(shape_));
  return data_[0];
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on && !grad_) grad_.emplace(data_.size(), 0.0);
  if (!on) grad_.reset();
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw Error("tensor has no gradient buffer");
  return *grad_;
}

std::span<double> Tensor::grad() {
  if (!grad_) throw Error("tensor has no gradient buffer");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw ShapeError(std::string(what) + ": expected shape " + shape_to_string(expected) +
                     ", got " + shape_to_string(t.shape()));
}

}  // namespace rehar

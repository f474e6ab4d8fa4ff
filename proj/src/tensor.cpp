#include "kpc/tensor.hpp"

#include <cmath>
#include <sstream>

#include "kpc/errors.hpp"

namespace kpc {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  if (shape_.size() > 4) throw ContractError("tensor rank above 4: " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 4) throw ContractError("tensor rank above 4: " + shape_str(shape_));
  if (shape_size(shape_) != data_.size()) {
    throw ContractError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_str(shape_));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ContractError("axis " + std::to_string(axis) + " out of range");
  return shape_[axis];
}

double& Tensor::at(std::size_t c, std::size_t h, std::size_t w) {
  return data_[(c * shape_[1] + h) * shape_[2] + w];
}

double Tensor::at(std::size_t c, std::size_t h, std::size_t w) const {
  return data_[(c * shape_[1] + h) * shape_[2] + w];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

std::span<double> Tensor::grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() { grad_.assign(data_.size(), 0.0); }

void Tensor::reshape(Shape shape) {
  if (shape_size(shape) != data_.size()) {
    throw ContractError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace kpc

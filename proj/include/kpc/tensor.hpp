#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace kpc {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of doubles with an optional gradient buffer.
///
/// Feature maps use channels x height x width. A rank-0 tensor holds a single
/// scalar. The gradient buffer is allocated on demand and always mirrors the
/// shape of the data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-3 accessors (c, h, w).
  double& at(std::size_t c, std::size_t h, std::size_t w);
  double at(std::size_t c, std::size_t h, std::size_t w) const;

  double item() const;

  bool has_grad() const { return !data_.empty() && grad_.size() == data_.size(); }
  std::span<double> grad();
  std::span<const double> grad() const { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); }

  // Same data, new extents with an equal element count.
  void reshape(Shape shape);

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

}  // namespace kpc

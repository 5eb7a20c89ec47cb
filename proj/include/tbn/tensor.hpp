#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tbn {

// Ordered list of positive extents, e.g. {c, h, w} for a filter or
// {b, c, h, w} for a batch of activations.
class Shape {
 public:
  Shape() = default;
  explicit Shape(std::vector<std::size_t> dims);
  Shape(std::initializer_list<std::size_t> dims);

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t element_count() const noexcept { return count_; }

  // Row-major strides, last axis fastest.
  std::vector<std::size_t> strides() const;

  std::string to_string() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::size_t count_ = 0;
};

// Dense binary32 tensor in row-major order. Immutable once built; every
// value is finite.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::span<const float> values);
  Tensor(Shape shape, std::vector<float>&& values);
  Tensor(Shape shape, std::initializer_list<float> values);

  static Tensor zeros(Shape shape);

  const Shape& shape() const noexcept { return shape_; }
  std::span<const float> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t rank() const noexcept { return shape_.rank(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }

  float operator[](std::size_t flat) const { return values_[flat]; }
  float at(std::span<const std::size_t> index) const;
  float at(std::initializer_list<std::size_t> index) const;

  std::size_t flat_index(std::span<const std::size_t> index) const;

  // Same values viewed under a different shape with equal element count.
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void validate() const;

  Shape shape_;
  std::vector<float> values_;
};

}  // namespace tbn

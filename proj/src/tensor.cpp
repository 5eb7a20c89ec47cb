#include "tbn/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "tbn/error.hpp"

namespace tbn {

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)), count_(1) {
  for (std::size_t d : dims_) {
    if (d == 0) fail(ErrorCode::InvalidShape, "zero extent in shape " + to_string());
    if (count_ > std::numeric_limits<std::size_t>::max() / d)
      fail(ErrorCode::InvalidShape, "element count overflows index range");
    count_ *= d;
  }
}

Shape::Shape(std::initializer_list<std::size_t> dims)
    : Shape(std::vector<std::size_t>(dims)) {}

std::vector<std::size_t> Shape::strides() const {
  std::vector<std::size_t> s(dims_.size(), 1);
  for (std::size_t i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i];
  return s;
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::span<const float> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  validate();
}

Tensor::Tensor(Shape shape, std::vector<float>&& values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  validate();
}

Tensor::Tensor(Shape shape, std::initializer_list<float> values)
    : Tensor(std::move(shape), std::span<const float>(values.begin(), values.size())) {}

Tensor Tensor::zeros(Shape shape) {
  std::vector<float> v(shape.element_count(), 0.0f);
  return Tensor(std::move(shape), std::move(v));
}

void Tensor::validate() const {
  if (values_.size() != shape_.element_count()) {
    fail(ErrorCode::LengthMismatch, "shape " + shape_.to_string() + " needs " +
                                        std::to_string(shape_.element_count()) +
                                        " values, got " + std::to_string(values_.size()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i]))
      fail(ErrorCode::NonFiniteValue, "non-finite value at flat index " + std::to_string(i));
  }
}

std::size_t Tensor::flat_index(std::span<const std::size_t> index) const {
  if (index.size() != shape_.rank())
    fail(ErrorCode::IndexOutOfBounds, "index rank " + std::to_string(index.size()) +
                                          " vs tensor rank " + std::to_string(shape_.rank()));
  std::size_t flat = 0;
  for (std::size_t d = 0; d < index.size(); ++d) {
    if (index[d] >= shape_[d])
      fail(ErrorCode::IndexOutOfBounds, "axis " + std::to_string(d) + " index " +
                                            std::to_string(index[d]) + " >= " +
                                            std::to_string(shape_[d]));
    flat = flat * shape_[d] + index[d];
  }
  return flat;
}

float Tensor::at(std::span<const std::size_t> index) const {
  return values_[flat_index(index)];
}

float Tensor::at(std::initializer_list<std::size_t> index) const {
  return at(std::span<const std::size_t>(index.begin(), index.size()));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.element_count() != values_.size())
    fail(ErrorCode::LengthMismatch, "cannot reshape " + shape_.to_string() + " to " +
                                        shape.to_string());
  Tensor t;
  t.shape_ = std::move(shape);
  t.values_ = values_;
  return t;
}

}  // namespace tbn

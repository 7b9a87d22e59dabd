#include "gradconceal/tensor.hpp"

#include <cmath>
#include <sstream>

#include "gradconceal/errors.hpp"

namespace gc {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace {
void check_dims(const Shape& shape) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  if (!std::isfinite(fill)) throw NumericError("non-finite fill value");
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data, Finite check)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_size(shape_))
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  if (check == Finite::required && !all_finite())
    throw NumericError("tensor contains NaN or Inf");
}

Tensor Tensor::from(std::initializer_list<float> values) {
  return Tensor(Shape{values.size()}, std::vector<float>(values));
}

float Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_, Finite::unchecked);
}

bool Tensor::all_finite() const noexcept {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::size_t Tensor::row_size() const {
  if (shape_.empty()) throw ShapeError("scalar has no rows");
  return data_.size() / shape_[0];
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin >= end || end > shape_[0])
    throw ShapeError("bad row slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") of " + shape_string(shape_));
  const std::size_t stride = row_size();
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s),
                std::vector<float>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                   data_.begin() + static_cast<std::ptrdiff_t>(end * stride)),
                Finite::unchecked);
}

std::span<const float> Tensor::row(std::size_t i) const {
  const std::size_t stride = row_size();
  return std::span<const float>(data_).subspan(i * stride, stride);
}

std::span<float> Tensor::row(std::size_t i) {
  const std::size_t stride = row_size();
  return std::span<float>(data_).subspan(i * stride, stride);
}

}  // namespace gc

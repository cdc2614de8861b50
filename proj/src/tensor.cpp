#include "xmar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace xmar {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename S>
Tensor<S>::Tensor(Shape shape, S fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension in shape " + to_string(shape_));
  }
  data_.assign(static_cast<std::size_t>(numel(shape_)), fill);
}

template <typename S>
Tensor<S>::Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension in shape " + to_string(shape_));
  }
  if (static_cast<std::int64_t>(data_.size()) != numel(shape_)) {
    throw ShapeError("tensor: shape " + to_string(shape_) + " needs " + std::to_string(numel(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

template <typename S>
S Tensor<S>::item() const {
  if (data_.size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape_) + " is not a scalar");
  return data_[0];
}

template <typename S>
void Tensor<S>::fill(S value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename S>
Tensor<S> Tensor<S>::reshaped(Shape shape) const {
  if (numel(shape) != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError("reshape: cannot view " + to_string(shape_) + " as " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename S>
bool all_finite(std::span<const S> values) {
  return std::all_of(values.begin(), values.end(), [](S v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;
template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);

}  // namespace xmar

#include "lantern/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "lantern/errors.hpp"

namespace lantern::ad {

std::int64_t shape_size(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void check_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e <= 0) {
      throw ValidationError("tensor: extents must be positive, got " + shape_str(shape));
    }
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<Impl>();
  impl->data.assign(static_cast<std::size_t>(shape_size(shape)), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& x : t.impl_->data) x = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (shape_size(shape) != static_cast<std::int64_t>(data.size())) {
    throw ValidationError("tensor: data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty()) {
    impl_->grad.assign(impl_->data.size(), 0.0);
  }
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() const {
  if (impl_->grad.empty()) {
    impl_->grad.assign(impl_->data.size(), 0.0);
  }
  return impl_->grad;
}

void Tensor::zero_grad() const {
  if (!impl_->grad.empty()) {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }
}

double Tensor::item() const {
  if (size() != 1) {
    throw ValidationError("tensor: item() requires a scalar, got shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

}  // namespace lantern::ad

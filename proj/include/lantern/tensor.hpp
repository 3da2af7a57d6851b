#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lantern::ad {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense 64-bit float tensor with an optional gradient buffer. Copies are
// cheap and share storage. Tensors produced by tape operations are treated
// as immutable; mutable_data() is for leaves (parameters, inputs) only.
// Gradients accumulate additively until explicitly zeroed.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  std::int64_t extent(std::int64_t axis) const { return impl_->shape[axis]; }
  std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }
  bool requires_grad() const { return impl_->requires_grad; }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() const { return impl_->data; }

  std::span<const double> grad() const;
  std::span<double> mutable_grad() const;
  void zero_grad() const;

  // Scalar value; throws ValidationError unless size() == 1.
  double item() const;

  // Stable identity of the underlying storage (for maps and debug output).
  const void* id() const { return impl_.get(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first use
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
};

}  // namespace lantern::ad

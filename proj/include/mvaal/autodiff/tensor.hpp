#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvaal::ad {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by primitives whose inputs do not have compatible shapes. The
// message always names the primitive and the offending shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A graph-attached tensor from an earlier generation was used after
// reset_graph().
class StaleGraphError : public Error {
 public:
  using Error::Error;
};

class UnknownPrimitiveError : public Error {
 public:
  using Error::Error;
};

using Storage = std::shared_ptr<std::vector<double>>;

struct TensorImpl {
  Shape shape;
  Storage storage;
  bool requires_grad = false;
  // Index of the producing node in its graph; -1 for leaves.
  std::int64_t node = -1;
  std::uint64_t generation = 0;
  const void* graph = nullptr;
};

// Dense row-major float64 array. Copies are shallow (shared handle); use
// clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value);
  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor from_storage(Shape shape, Storage storage);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;

  std::span<const double> data() const;
  // Writable view; only leaves may be mutated in place (optimizer updates,
  // running statistics).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::int64_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  bool is_leaf() const;
  Tensor& set_requires_grad(bool on = true);

  // Same storage, no graph attachment, requires_grad=false.
  Tensor detach() const;
  Tensor clone() const;

  const TensorImpl* id() const { return impl_.get(); }
  TensorImpl* impl() const { return impl_.get(); }
  const Storage& storage() const;

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

bool grad_enabled();

// Scoped override of the thread's gradient-recording mode.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

// Drops every node recorded on this thread's graph and bumps its
// generation. Graph-attached tensors created before the reset become stale.
void reset_graph();
std::uint64_t graph_generation();
std::size_t graph_size();

// Constant copy of the selected rows (leading-axis entries) of `x`; not
// recorded on the tape.
Tensor take_rows(const Tensor& x, std::span<const std::int64_t> rows);

}  // namespace mvaal::ad

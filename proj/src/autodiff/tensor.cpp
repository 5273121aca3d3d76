#include "mvaal/autodiff/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "graph.hpp"

namespace mvaal::ad {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
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

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
  }
  if (static_cast<std::int64_t>(data.size()) != ad::numel(shape)) {
    throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->storage = std::make_shared<std::vector<double>>(std::move(data));
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::ones(const Shape& shape) { return full(shape, 1.0); }

Tensor Tensor::full(const Shape& shape, double value) {
  return Tensor(shape, std::vector<double>(static_cast<std::size_t>(ad::numel(shape)), value));
}

Tensor Tensor::from_storage(Shape shape, Storage storage) {
  if (static_cast<std::int64_t>(storage->size()) != ad::numel(shape)) {
    throw ShapeError("tensor: storage length does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->storage = std::move(storage);
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw Error("tensor: use of undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("tensor: axis out of range for " + shape_str(s));
  return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return ad::numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw Error("tensor: use of undefined tensor");
  return {impl_->storage->data(), impl_->storage->size()};
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw Error("tensor: use of undefined tensor");
  if (impl_->node >= 0) throw Error("tensor: in-place write to a graph-attached tensor");
  return {impl_->storage->data(), impl_->storage->size()};
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("tensor: item() on shape " + shape_str(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::is_leaf() const { return impl_ && impl_->node < 0; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw Error("tensor: requires_grad can only be set on leaves");
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::detach() const { return from_storage(shape(), impl_->storage); }

Tensor Tensor::clone() const {
  return Tensor(shape(), std::vector<double>(data().begin(), data().end()));
}

const Storage& Tensor::storage() const {
  if (!impl_) throw Error("tensor: use of undefined tensor");
  return impl_->storage;
}

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

bool grad_enabled() { return t_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(t_grad_enabled) { t_grad_enabled = enabled; }

GradModeGuard::~GradModeGuard() { t_grad_enabled = previous_; }

void reset_graph() { detail::Graph::current().reset(); }

std::uint64_t graph_generation() { return detail::Graph::current().generation(); }

std::size_t graph_size() { return detail::Graph::current().size(); }

Tensor take_rows(const Tensor& x, std::span<const std::int64_t> rows) {
  if (x.rank() < 1) throw ShapeError("take_rows: scalar input");
  const std::int64_t n = x.dim(0);
  const auto stride = static_cast<std::size_t>(x.numel() / n);
  std::vector<double> out(rows.size() * stride);
  const auto d = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n)
      throw ShapeError("take_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       shape_str(x.shape()));
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(rows[i] * stride), stride,
                out.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  Shape shape = x.shape();
  shape[0] = static_cast<std::int64_t>(rows.size());
  return Tensor(std::move(shape), std::move(out));
}

namespace detail {

Graph& Graph::current() {
  thread_local Graph graph;
  return graph;
}

void Graph::check_fresh(const Tensor& t) const {
  const auto* impl = t.id();
  if (impl->node >= 0 && (impl->graph != this || impl->generation != generation_)) {
    throw StaleGraphError("autodiff: tensor from a previous graph generation (" +
                          std::to_string(impl->generation) + " vs current " +
                          std::to_string(generation_) + ")");
  }
}

void Graph::record(Op op, std::vector<Tensor> inputs, Tensor& output, NodeAttrs attrs) {
  if (!grad_enabled()) return;
  bool any = false;
  for (const auto& in : inputs) {
    if (in.requires_grad()) {
      check_fresh(in);
      any = true;
    }
  }
  if (!any) return;
  auto* impl = output.impl();
  impl->requires_grad = true;
  impl->node = static_cast<std::int64_t>(nodes_.size());
  impl->generation = generation_;
  impl->graph = this;
  nodes_.push_back(Node{op, std::move(inputs), output, std::move(attrs)});
}

void Graph::reset() {
  nodes_.clear();
  ++generation_;
}

}  // namespace detail
}  // namespace mvaal::ad

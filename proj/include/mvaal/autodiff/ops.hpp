#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mvaal/autodiff/tensor.hpp"

namespace mvaal::ad {

// Primitive catalog. Every function records a graph node when gradient
// recording is enabled and at least one input requires grad. Binary
// elementwise ops follow numpy broadcasting.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);

Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
// log(sigmoid(x)), stable for large |x|.
Tensor log_sigmoid(const Tensor& x);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

struct ConvAttrs {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  // Extra rows/cols appended to a transposed convolution's output so it can
  // exactly invert a strided convolution's shape.
  std::int64_t output_padding = 0;
};

// input [N,C,H,W], weight [O,C,kh,kw] -> [N,O,Ho,Wo]
Tensor conv2d(const Tensor& input, const Tensor& weight, ConvAttrs attrs = {});
// input [N,O,H,W], weight [O,C,kh,kw] -> [N,C,Ho,Wo]; adjoint of conv2d.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, ConvAttrs attrs = {});
// Gradient of conv2d w.r.t. its weight: input [N,C,H,W], grad_out [N,O,Ho,Wo]
// -> [O,C,kh,kw].
Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_out, std::int64_t kh,
                          std::int64_t kw, ConvAttrs attrs = {});

Tensor max_pool2d(const Tensor& x, std::int64_t kernel, std::int64_t stride);

// Empty axes means every axis.
Tensor sum(const Tensor& x, std::vector<std::int64_t> axes = {}, bool keepdim = false);
Tensor mean(const Tensor& x, std::vector<std::int64_t> axes = {}, bool keepdim = false);

// Row-wise softmax of a [N,C] tensor.
Tensor softmax(const Tensor& x);
// Mean over rows of -log softmax(logits)[row, label]. Returns shape [].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::int64_t axis);
Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t end);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
// Reduces a broadcast result back to `shape`.
Tensor sum_to(const Tensor& x, const Shape& shape);
// Euclidean norm over every axis after the first: [N,...] -> [N].
Tensor l2_norm(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, double b) { return add(a, -b); }

// Generic entry point keyed by primitive name, used by the bindings and the
// gradient test sweep.
using AttrValue = std::variant<std::int64_t, double, std::vector<std::int64_t>>;
using Attrs = std::map<std::string, AttrValue, std::less<>>;

Tensor apply_primitive(std::string_view op, std::span<const Tensor> inputs, const Attrs& attrs = {});
std::vector<std::string> primitive_names();

}  // namespace mvaal::ad

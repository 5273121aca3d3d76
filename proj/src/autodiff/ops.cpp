#include "mvaal/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "graph.hpp"
#include "kernels.hpp"

namespace mvaal::ad {

using detail::Graph;
using detail::NodeAttrs;
using detail::Op;

namespace {

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

std::string shapes2(const Tensor& a, const Tensor& b) {
  return shape_str(a.shape()) + " vs " + shape_str(b.shape());
}

Tensor make(Shape shape, std::vector<double> data) {
  return Tensor(std::move(shape), std::move(data));
}

Tensor finish(Op op, std::vector<Tensor> inputs, Tensor out, NodeAttrs attrs = {}) {
  Graph::current().record(op, std::move(inputs), out, std::move(attrs));
  return out;
}

std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(i) + 1] * s[static_cast<std::size_t>(i) + 1];
  }
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      shape_fail(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `in` laid against the (higher-rank) `out` shape; broadcast axes
// get stride 0.
std::vector<std::int64_t> aligned_strides(const Shape& in, const Shape& out) {
  const auto st = strides_of(in);
  std::vector<std::int64_t> res(out.size(), 0);
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    res[i + off] = in[i] == 1 ? 0 : st[i];
  }
  return res;
}

// Calls f(out_flat, a_off, b_off) over the broadcast output in row-major order.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& sa,
                        const std::vector<std::int64_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::int64_t total = numel(out);
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::int64_t inner = out[r - 1];
  const std::int64_t ia = sa[r - 1];
  const std::int64_t ib = sb[r - 1];
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t base = 0; base < total; base += inner) {
    for (std::int64_t j = 0; j < inner; ++j) f(base + j, oa + j * ia, ob + j * ib);
    for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      ++idx[du];
      oa += sa[du];
      ob += sb[du];
      if (idx[du] < out[du]) break;
      oa -= sa[du] * idx[du];
      ob -= sb[du] * idx[du];
      idx[du] = 0;
    }
  }
}

template <class F>
Tensor binary(Op op, const char* name, const Tensor& a, const Tensor& b, F f) {
  const auto& A = a.data();
  const auto& B = b.data();
  if (a.shape() == b.shape()) {
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i], B[i]);
    return finish(op, {a, b}, make(a.shape(), std::move(out)));
  }
  Shape os = broadcast_shape(a.shape(), b.shape(), name);
  std::vector<double> out(static_cast<std::size_t>(numel(os)));
  if (b.numel() == 1 && os == a.shape()) {
    const double bv = B[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i], bv);
  } else if (a.numel() == 1 && os == b.shape()) {
    const double av = A[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av, B[i]);
  } else {
    for_each_broadcast(os, aligned_strides(a.shape(), os), aligned_strides(b.shape(), os),
                       [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                         out[static_cast<std::size_t>(o)] = f(A[static_cast<std::size_t>(ia)],
                                                              B[static_cast<std::size_t>(ib)]);
                       });
  }
  return finish(op, {a, b}, make(std::move(os), std::move(out)));
}

template <class F>
Tensor unary(Op op, const Tensor& x, F f, NodeAttrs attrs = {}) {
  const auto X = x.data();
  std::vector<double> out(X.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(X[i]);
  return finish(op, {x}, make(x.shape(), std::move(out)), std::move(attrs));
}

std::int64_t norm_axis(std::int64_t axis, std::size_t rank, const char* op) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) shape_fail(op, "axis out of range for rank " + std::to_string(rank));
  return axis;
}

kernels::ConvGeom conv_geom(const Shape& in, const Shape& w, const ConvAttrs& a, const char* op) {
  if (in.size() != 4 || w.size() != 4) {
    shape_fail(op, "expects 4-d input and weight, got " + shape_str(in) + " and " + shape_str(w));
  }
  if (in[1] != w[1]) shape_fail(op, "channel mismatch " + shape_str(in) + " vs weight " + shape_str(w));
  if (a.stride <= 0 || a.padding < 0) shape_fail(op, "invalid stride/padding");
  kernels::ConvGeom g{};
  g.n = in[0];
  g.c = in[1];
  g.h = in[2];
  g.w = in[3];
  g.o = w[0];
  g.kh = w[2];
  g.kw = w[3];
  g.stride = a.stride;
  g.padding = a.padding;
  g.ho = (g.h + 2 * g.padding - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.padding - g.kw) / g.stride + 1;
  if (g.h + 2 * g.padding < g.kh || g.w + 2 * g.padding < g.kw || g.ho <= 0 || g.wo <= 0) {
    shape_fail(op, "kernel larger than padded input " + shape_str(in) + " vs weight " + shape_str(w));
  }
  return g;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(Op::kAdd, "add", a, b, [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(Op::kSub, "sub", a, b, [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(Op::kMul, "mul", a, b, [](double x, double y) { return x * y; });
}
Tensor div(const Tensor& a, const Tensor& b) {
  return binary(Op::kDiv, "div", a, b, [](double x, double y) { return x / y; });
}
Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }

Tensor neg(const Tensor& x) { return unary(Op::kNeg, x, [](double v) { return -v; }); }
Tensor exp(const Tensor& x) { return unary(Op::kExp, x, [](double v) { return std::exp(v); }); }
Tensor log(const Tensor& x) { return unary(Op::kLog, x, [](double v) { return std::log(v); }); }
Tensor sqrt(const Tensor& x) { return unary(Op::kSqrt, x, [](double v) { return std::sqrt(v); }); }
Tensor square(const Tensor& x) { return unary(Op::kSquare, x, [](double v) { return v * v; }); }
Tensor relu(const Tensor& x) {
  return unary(Op::kRelu, x, [](double v) { return v > 0.0 ? v : 0.0; });
}
Tensor leaky_relu(const Tensor& x, double slope) {
  NodeAttrs attrs;
  attrs.scalar = slope;
  return unary(Op::kLeakyRelu, x, [slope](double v) { return v > 0.0 ? v : slope * v; }, attrs);
}
Tensor sigmoid(const Tensor& x) {
  return unary(Op::kSigmoid, x, [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}
Tensor tanh(const Tensor& x) { return unary(Op::kTanh, x, [](double v) { return std::tanh(v); }); }
Tensor log_sigmoid(const Tensor& x) {
  return unary(Op::kLogSigmoid, x, [](double v) {
    return v >= 0.0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_fail("matmul", "incompatible shapes " + shapes2(a, b));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  kernels::gemm(m, k, n, a.data().data(), b.data().data(), out.data());
  return finish(Op::kMatmul, {a, b}, make({m, n}, std::move(out)));
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) shape_fail("transpose", "expects 2-d input, got " + shape_str(x.shape()));
  const auto m = x.dim(0), n = x.dim(1);
  const auto X = x.data();
  std::vector<double> out(X.size());
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(j * m + i)] = X[static_cast<std::size_t>(i * n + j)];
    }
  }
  return finish(Op::kTranspose, {x}, make({n, m}, std::move(out)));
}

Tensor conv2d(const Tensor& input, const Tensor& weight, ConvAttrs attrs) {
  const auto g = conv_geom(input.shape(), weight.shape(), attrs, "conv2d");
  std::vector<double> out(static_cast<std::size_t>(g.n * g.o * g.ho * g.wo));
  kernels::conv_forward(g, input.data().data(), weight.data().data(), out.data());
  NodeAttrs na;
  na.conv = attrs;
  return finish(Op::kConv2d, {input, weight}, make({g.n, g.o, g.ho, g.wo}, std::move(out)), na);
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, ConvAttrs attrs) {
  const auto& in = input.shape();
  const auto& w = weight.shape();
  if (in.size() != 4 || w.size() != 4 || in[1] != w[0]) {
    shape_fail("conv_transpose2d", "incompatible input/weight " + shapes2(input, weight));
  }
  if (attrs.stride <= 0 || attrs.padding < 0 || attrs.output_padding < 0 ||
      attrs.output_padding >= std::max<std::int64_t>(attrs.stride, 1)) {
    shape_fail("conv_transpose2d", "invalid stride/padding/output_padding");
  }
  const std::int64_t h = (in[2] - 1) * attrs.stride - 2 * attrs.padding + w[2] + attrs.output_padding;
  const std::int64_t wd = (in[3] - 1) * attrs.stride - 2 * attrs.padding + w[3] + attrs.output_padding;
  if (h <= 0 || wd <= 0) shape_fail("conv_transpose2d", "empty output for " + shapes2(input, weight));
  const auto g = conv_geom({in[0], w[1], h, wd}, w, attrs, "conv_transpose2d");
  if (g.ho != in[2] || g.wo != in[3]) {
    shape_fail("conv_transpose2d", "inconsistent geometry for " + shapes2(input, weight));
  }
  std::vector<double> out(static_cast<std::size_t>(g.n * g.c * g.h * g.w), 0.0);
  kernels::conv_adjoint(g, input.data().data(), weight.data().data(), out.data());
  NodeAttrs na;
  na.conv = attrs;
  return finish(Op::kConvTranspose2d, {input, weight}, make({g.n, g.c, g.h, g.w}, std::move(out)),
                na);
}

Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_out, std::int64_t kh,
                          std::int64_t kw, ConvAttrs attrs) {
  const auto& in = input.shape();
  const auto& go = grad_out.shape();
  if (in.size() != 4 || go.size() != 4 || in[0] != go[0]) {
    shape_fail("conv2d_weight_grad", "incompatible shapes " + shapes2(input, grad_out));
  }
  const auto g = conv_geom(in, {go[1], in[1], kh, kw}, attrs, "conv2d_weight_grad");
  if (g.ho != go[2] || g.wo != go[3]) {
    shape_fail("conv2d_weight_grad", "grad_out spatial mismatch " + shapes2(input, grad_out));
  }
  std::vector<double> out(static_cast<std::size_t>(g.o * g.k()));
  kernels::conv_weight_grad(g, input.data().data(), grad_out.data().data(), out.data());
  NodeAttrs na;
  na.conv = attrs;
  na.kh = kh;
  na.kw = kw;
  return finish(Op::kConvWeightGrad, {input, grad_out}, make({g.o, g.c, kh, kw}, std::move(out)), na);
}

Tensor max_pool2d(const Tensor& x, std::int64_t kernel, std::int64_t stride) {
  const auto& s = x.shape();
  if (s.size() != 4 || kernel <= 0 || stride <= 0 || s[2] < kernel || s[3] < kernel) {
    shape_fail("max_pool2d", "invalid input " + shape_str(s) + " for kernel " + std::to_string(kernel));
  }
  const std::int64_t ho = (s[2] - kernel) / stride + 1;
  const std::int64_t wo = (s[3] - kernel) / stride + 1;
  const std::int64_t planes = s[0] * s[1];
  const auto X = x.data();
  std::vector<double> out(static_cast<std::size_t>(planes * ho * wo));
  auto idx = std::make_shared<std::vector<std::int64_t>>(out.size());
  for (std::int64_t p = 0; p < planes; ++p) {
    const std::int64_t base = p * s[2] * s[3];
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        std::int64_t best = base + (oy * stride) * s[3] + ox * stride;
        for (std::int64_t i = 0; i < kernel; ++i) {
          for (std::int64_t j = 0; j < kernel; ++j) {
            const std::int64_t at = base + (oy * stride + i) * s[3] + ox * stride + j;
            if (X[static_cast<std::size_t>(at)] > X[static_cast<std::size_t>(best)]) best = at;
          }
        }
        const auto o = static_cast<std::size_t>((p * ho + oy) * wo + ox);
        out[o] = X[static_cast<std::size_t>(best)];
        (*idx)[o] = best;
      }
    }
  }
  NodeAttrs na;
  na.indices = idx;
  return finish(Op::kMaxPool2d, {x}, make({s[0], s[1], ho, wo}, std::move(out)), na);
}

namespace detail {

// Scatter of pooled gradients back to argmax positions.
Tensor pool_scatter(const Tensor& g, std::shared_ptr<const std::vector<std::int64_t>> idx,
                    const Shape& shape) {
  std::vector<double> out(static_cast<std::size_t>(numel(shape)), 0.0);
  const auto G = g.data();
  for (std::size_t i = 0; i < G.size(); ++i) out[static_cast<std::size_t>((*idx)[i])] += G[i];
  NodeAttrs na;
  na.indices = std::move(idx);
  na.shape = g.shape();
  return finish(Op::kPoolScatter, {g}, make(shape, std::move(out)), na);
}

Tensor pool_gather(const Tensor& x, std::shared_ptr<const std::vector<std::int64_t>> idx,
                   const Shape& shape) {
  std::vector<double> out(static_cast<std::size_t>(numel(shape)));
  const auto X = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[static_cast<std::size_t>((*idx)[i])];
  NodeAttrs na;
  na.indices = std::move(idx);
  na.shape = x.shape();
  return finish(Op::kPoolGather, {x}, make(shape, std::move(out)), na);
}

Tensor slice_backward(const Tensor& g, const Shape& shape, std::int64_t axis, std::int64_t start) {
  std::vector<double> out(static_cast<std::size_t>(numel(shape)), 0.0);
  const auto& gs = g.shape();
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::int64_t len = gs[static_cast<std::size_t>(axis)];
  const std::int64_t full = shape[static_cast<std::size_t>(axis)];
  const auto G = g.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(G.data() + o * len * inner, len * inner, out.data() + (o * full + start) * inner);
  }
  NodeAttrs na;
  na.axis = axis;
  na.start = start;
  return finish(Op::kSliceBackward, {g}, make(shape, std::move(out)), na);
}

}  // namespace detail

Tensor sum_to(const Tensor& x, const Shape& shape) {
  const auto& xs = x.shape();
  if (xs == shape) return x;
  if (shape.size() > xs.size()) shape_fail("sum_to", "target " + shape_str(shape) + " has higher rank than " + shape_str(xs));
  const std::size_t off = xs.size() - shape.size();
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] != 1 && shape[i] != xs[i + off]) {
      shape_fail("sum_to", "cannot reduce " + shape_str(xs) + " to " + shape_str(shape));
    }
  }
  std::vector<double> out(static_cast<std::size_t>(numel(shape)), 0.0);
  const auto X = x.data();
  const auto st = aligned_strides(shape, xs);
  const std::vector<std::int64_t> zero(xs.size(), 0);
  for_each_broadcast(xs, st, zero, [&](std::int64_t i, std::int64_t o, std::int64_t) {
    out[static_cast<std::size_t>(o)] += X[static_cast<std::size_t>(i)];
  });
  NodeAttrs na;
  na.shape = xs;
  return finish(Op::kSumTo, {x}, make(shape, std::move(out)), na);
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  const auto& xs = x.shape();
  if (xs == shape) return x;
  if (broadcast_shape(xs, shape, "broadcast_to") != shape) {
    shape_fail("broadcast_to", "cannot broadcast " + shape_str(xs) + " to " + shape_str(shape));
  }
  std::vector<double> out(static_cast<std::size_t>(numel(shape)));
  const auto X = x.data();
  const std::vector<std::int64_t> zero(shape.size(), 0);
  for_each_broadcast(shape, aligned_strides(xs, shape), zero,
                     [&](std::int64_t o, std::int64_t i, std::int64_t) {
                       out[static_cast<std::size_t>(o)] = X[static_cast<std::size_t>(i)];
                     });
  NodeAttrs na;
  na.shape = xs;
  return finish(Op::kBroadcastTo, {x}, make(shape, std::move(out)), na);
}

Tensor sum(const Tensor& x, std::vector<std::int64_t> axes, bool keepdim) {
  const auto& xs = x.shape();
  if (axes.empty()) {
    axes.resize(xs.size());
    std::iota(axes.begin(), axes.end(), 0);
  }
  Shape kept = xs;
  for (auto& a : axes) {
    a = norm_axis(a, xs.size(), "sum");
    kept[static_cast<std::size_t>(a)] = 1;
  }
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  Shape out_shape;
  if (keepdim) {
    out_shape = kept;
  } else {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!std::binary_search(axes.begin(), axes.end(), static_cast<std::int64_t>(i))) {
        out_shape.push_back(xs[i]);
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(numel(kept)), 0.0);
  const auto X = x.data();
  const std::vector<std::int64_t> zero(xs.size(), 0);
  for_each_broadcast(xs, aligned_strides(kept, xs), zero,
                     [&](std::int64_t i, std::int64_t o, std::int64_t) {
                       out[static_cast<std::size_t>(o)] += X[static_cast<std::size_t>(i)];
                     });
  NodeAttrs na;
  na.shape = kept;
  return finish(Op::kSum, {x}, make(std::move(out_shape), std::move(out)), na);
}

Tensor mean(const Tensor& x, std::vector<std::int64_t> axes, bool keepdim) {
  std::int64_t count = 1;
  if (axes.empty()) {
    count = x.numel();
  } else {
    for (auto a : axes) count *= x.shape()[static_cast<std::size_t>(norm_axis(a, x.shape().size(), "mean"))];
  }
  return mul(sum(x, std::move(axes), keepdim), 1.0 / static_cast<double>(count));
}

Tensor softmax(const Tensor& x) {
  if (x.rank() != 2) shape_fail("softmax", "expects [N,C], got " + shape_str(x.shape()));
  const auto n = x.dim(0), c = x.dim(1);
  const auto X = x.data();
  std::vector<double> out(X.size());
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = X.data() + i * c;
    double* dst = out.data() + i * c;
    const double m = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      dst[j] = std::exp(row[j] - m);
      z += dst[j];
    }
    for (std::int64_t j = 0; j < c; ++j) dst[j] /= z;
  }
  return finish(Op::kSoftmax, {x}, make(x.shape(), std::move(out)));
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels) {
  if (logits.rank() != 2 || static_cast<std::int64_t>(labels.size()) != logits.dim(0)) {
    shape_fail("softmax_cross_entropy", "logits " + shape_str(logits.shape()) + " with " +
                                            std::to_string(labels.size()) + " labels");
  }
  const auto n = logits.dim(0), c = logits.dim(1);
  const auto X = logits.data();
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= c) {
      shape_fail("softmax_cross_entropy", "label " + std::to_string(label) + " out of range [0," +
                                              std::to_string(c) + ")");
    }
    const double* row = X.data() + i * c;
    const double m = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::int64_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    total += m + std::log(z) - row[label];
  }
  NodeAttrs na;
  na.indices = std::make_shared<const std::vector<std::int64_t>>(labels.begin(), labels.end());
  return finish(Op::kSoftmaxCrossEntropy, {logits}, make({}, {total / static_cast<double>(n)}), na);
}

Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t infer = -1, known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) shape_fail("reshape", "more than one inferred dimension");
      infer = static_cast<std::int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  if (numel(shape) != x.numel()) {
    shape_fail("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  if (shape == x.shape()) return x;
  NodeAttrs na;
  na.shape = x.shape();
  return finish(Op::kReshape, {x}, Tensor::from_storage(std::move(shape), x.storage()), na);
}

Tensor concat(std::span<const Tensor> parts, std::int64_t axis) {
  if (parts.empty()) shape_fail("concat", "no inputs");
  const auto& s0 = parts[0].shape();
  axis = norm_axis(axis, s0.size(), "concat");
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  std::vector<std::int64_t> sizes;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != s0.size()) shape_fail("concat", "rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<std::int64_t>(i) != axis && s[i] != s0[i]) {
        shape_fail("concat", "shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
      }
    }
    sizes.push_back(s[static_cast<std::size_t>(axis)]);
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= s0[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  const std::int64_t total = out_shape[static_cast<std::size_t>(axis)];
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto P = parts[k].data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(P.data() + o * sizes[k] * inner, sizes[k] * inner,
                  out.data() + (o * total + offset) * inner);
    }
    offset += sizes[k];
  }
  NodeAttrs na;
  na.axis = axis;
  na.sizes = std::move(sizes);
  return finish(Op::kConcat, std::vector<Tensor>(parts.begin(), parts.end()),
                make(std::move(out_shape), std::move(out)), na);
}

Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t end) {
  const auto& s = x.shape();
  axis = norm_axis(axis, s.size(), "slice");
  const std::int64_t full = s[static_cast<std::size_t>(axis)];
  if (start < 0 || end > full || start >= end) {
    shape_fail("slice", "range [" + std::to_string(start) + "," + std::to_string(end) +
                            ") invalid for " + shape_str(s));
  }
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = end - start;
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
  const auto X = x.data();
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  const std::int64_t len = end - start;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(X.data() + (o * full + start) * inner, len * inner, out.data() + o * len * inner);
  }
  NodeAttrs na;
  na.axis = axis;
  na.start = start;
  na.shape = s;
  return finish(Op::kSlice, {x}, make(std::move(out_shape), std::move(out)), na);
}

Tensor l2_norm(const Tensor& x) {
  if (x.rank() < 2) shape_fail("l2_norm", "expects [N,...], got " + shape_str(x.shape()));
  const auto n = x.dim(0);
  const auto per = x.numel() / n;
  const auto X = x.data();
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < per; ++j) {
      const double v = X[static_cast<std::size_t>(i * per + j)];
      acc += v * v;
    }
    out[static_cast<std::size_t>(i)] = std::sqrt(acc);
  }
  return finish(Op::kL2Norm, {x}, make({n}, std::move(out)));
}

}  // namespace mvaal::ad

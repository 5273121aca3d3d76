#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "graph.hpp"
#include "mvaal/autodiff/autodiff.hpp"

namespace mvaal::ad {

namespace detail {

Tensor pool_scatter(const Tensor& g, std::shared_ptr<const std::vector<std::int64_t>> idx,
                    const Shape& shape);
Tensor pool_gather(const Tensor& x, std::shared_ptr<const std::vector<std::int64_t>> idx,
                   const Shape& shape);
Tensor slice_backward(const Tensor& g, const Shape& shape, std::int64_t axis, std::int64_t start);

namespace {

// Constant 0/1 (or slope) mask; never graph-attached.
template <class F>
Tensor mask_of(const Tensor& x, F f) {
  const auto X = x.data();
  std::vector<double> m(X.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = f(X[i]);
  return Tensor(x.shape(), std::move(m));
}

// Output padding that makes a transposed conv reproduce `input`'s spatial size.
ConvAttrs adjoint_attrs(const ConvAttrs& a, const Shape& input, const Shape& weight,
                        const Shape& conv_out) {
  const std::int64_t rh = input[2] - ((conv_out[2] - 1) * a.stride - 2 * a.padding + weight[2]);
  const std::int64_t rw = input[3] - ((conv_out[3] - 1) * a.stride - 2 * a.padding + weight[3]);
  if (rh != rw) {
    throw ShapeError("conv2d backward: non-square output padding " + std::to_string(rh) + "/" +
                     std::to_string(rw) + " for input " + shape_str(input));
  }
  return ConvAttrs{a.stride, a.padding, rh};
}

}  // namespace

std::vector<Tensor> node_backward(const Node& node, const Tensor& g) {
  const auto& in = node.inputs;
  const auto& at = node.attrs;
  std::vector<Tensor> out(in.size());
  auto need = [&](std::size_t i) { return in[i].requires_grad(); };
  const Tensor& y = node.output;

  switch (node.op) {
    case Op::kAdd:
      if (need(0)) out[0] = sum_to(g, in[0].shape());
      if (need(1)) out[1] = sum_to(g, in[1].shape());
      break;
    case Op::kSub:
      if (need(0)) out[0] = sum_to(g, in[0].shape());
      if (need(1)) out[1] = sum_to(neg(g), in[1].shape());
      break;
    case Op::kMul:
      if (need(0)) out[0] = sum_to(mul(g, in[1]), in[0].shape());
      if (need(1)) out[1] = sum_to(mul(g, in[0]), in[1].shape());
      break;
    case Op::kDiv:
      if (need(0)) out[0] = sum_to(div(g, in[1]), in[0].shape());
      if (need(1)) out[1] = sum_to(neg(div(mul(g, y), in[1])), in[1].shape());
      break;
    case Op::kNeg:
      out[0] = neg(g);
      break;
    case Op::kExp:
      out[0] = mul(g, y);
      break;
    case Op::kLog:
      out[0] = div(g, in[0]);
      break;
    case Op::kSqrt:
      out[0] = div(g, mul(y, 2.0));
      break;
    case Op::kSquare:
      out[0] = mul(g, mul(in[0], 2.0));
      break;
    case Op::kRelu:
      out[0] = mul(g, mask_of(in[0], [](double v) { return v > 0.0 ? 1.0 : 0.0; }));
      break;
    case Op::kLeakyRelu: {
      const double slope = at.scalar;
      out[0] = mul(g, mask_of(in[0], [slope](double v) { return v > 0.0 ? 1.0 : slope; }));
      break;
    }
    case Op::kSigmoid:
      out[0] = mul(g, mul(y, add(neg(y), 1.0)));
      break;
    case Op::kTanh:
      out[0] = mul(g, add(neg(square(y)), 1.0));
      break;
    case Op::kLogSigmoid:
      out[0] = mul(g, sigmoid(neg(in[0])));
      break;
    case Op::kMatmul:
      if (need(0)) out[0] = matmul(g, transpose(in[1]));
      if (need(1)) out[1] = matmul(transpose(in[0]), g);
      break;
    case Op::kTranspose:
      out[0] = transpose(g);
      break;
    case Op::kConv2d: {
      const auto& w = in[1];
      if (need(0)) out[0] = conv_transpose2d(g, w, adjoint_attrs(at.conv, in[0].shape(), w.shape(), g.shape()));
      if (need(1)) out[1] = conv2d_weight_grad(in[0], g, w.dim(2), w.dim(3), {at.conv.stride, at.conv.padding, 0});
      break;
    }
    case Op::kConvTranspose2d: {
      const auto& w = in[1];
      const ConvAttrs fwd{at.conv.stride, at.conv.padding, 0};
      if (need(0)) out[0] = conv2d(g, w, fwd);
      if (need(1)) out[1] = conv2d_weight_grad(g, in[0], w.dim(2), w.dim(3), fwd);
      break;
    }
    case Op::kConvWeightGrad: {
      const ConvAttrs fwd{at.conv.stride, at.conv.padding, 0};
      const auto& gy = in[1];
      if (need(0)) out[0] = conv_transpose2d(gy, g, adjoint_attrs(fwd, in[0].shape(), g.shape(), gy.shape()));
      if (need(1)) out[1] = conv2d(in[0], g, fwd);
      break;
    }
    case Op::kMaxPool2d:
      out[0] = pool_scatter(g, at.indices, in[0].shape());
      break;
    case Op::kPoolScatter:
      out[0] = pool_gather(g, at.indices, in[0].shape());
      break;
    case Op::kPoolGather:
      out[0] = pool_scatter(g, at.indices, in[0].shape());
      break;
    case Op::kSum:
      out[0] = broadcast_to(reshape(g, at.shape), in[0].shape());
      break;
    case Op::kSoftmax:
      out[0] = mul(y, sub(g, sum(mul(g, y), {1}, true)));
      break;
    case Op::kSoftmaxCrossEntropy: {
      const auto& logits = in[0];
      std::vector<double> onehot(static_cast<std::size_t>(logits.numel()), 0.0);
      const auto c = logits.dim(1);
      for (std::size_t i = 0; i < at.indices->size(); ++i) {
        onehot[i * static_cast<std::size_t>(c) + static_cast<std::size_t>((*at.indices)[i])] = 1.0;
      }
      const Tensor target(logits.shape(), std::move(onehot));
      out[0] = mul(sub(softmax(logits), target), mul(g, 1.0 / static_cast<double>(logits.dim(0))));
      break;
    }
    case Op::kReshape:
      out[0] = reshape(g, in[0].shape());
      break;
    case Op::kConcat: {
      std::int64_t offset = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        if (need(k)) out[k] = slice(g, at.axis, offset, offset + at.sizes[k]);
        offset += at.sizes[k];
      }
      break;
    }
    case Op::kSlice:
      out[0] = slice_backward(g, in[0].shape(), at.axis, at.start);
      break;
    case Op::kSliceBackward: {
      const auto len = in[0].dim(static_cast<int>(at.axis));
      out[0] = slice(g, at.axis, at.start, at.start + len);
      break;
    }
    case Op::kBroadcastTo:
      out[0] = sum_to(g, in[0].shape());
      break;
    case Op::kSumTo:
      out[0] = broadcast_to(g, in[0].shape());
      break;
    case Op::kL2Norm: {
      const auto& x = in[0];
      Shape col(x.shape().size(), 1);
      col[0] = x.dim(0);
      const Tensor zero_guard = mask_of(y, [](double v) { return v == 0.0 ? 1.0 : 0.0; });
      out[0] = mul(x, reshape(div(g, add(y, zero_guard)), col));
      break;
    }
  }
  return out;
}

}  // namespace detail

std::vector<Tensor> backward(const Tensor& root, const std::vector<Tensor>& targets,
                             bool create_graph) {
  if (!root.defined() || root.rank() != 0) {
    throw ShapeError("backward: root must be a scalar of shape [], got " +
                     (root.defined() ? shape_str(root.shape()) : std::string("undefined")));
  }
  for (const auto& t : targets) {
    if (!t.defined() || !t.requires_grad()) {
      throw Error("backward: differentiation target does not require grad");
    }
  }
  auto& graph = detail::Graph::current();
  std::unordered_map<const TensorImpl*, Tensor> grads;
  std::unordered_set<const TensorImpl*> keep;
  for (const auto& t : targets) {
    graph.check_fresh(t);
    keep.insert(t.id());
  }

  if (root.requires_grad()) {
    graph.check_fresh(root);
    grads.emplace(root.id(), Tensor::ones({}));
    GradModeGuard mode(create_graph);
    for (std::int64_t i = root.impl()->node; i >= 0; --i) {
      const detail::Node& node = graph.node(i);
      auto it = grads.find(node.output.id());
      if (it == grads.end()) continue;
      const Tensor g = it->second;
      if (!keep.contains(node.output.id())) grads.erase(it);
      auto in_grads = detail::node_backward(node, g);
      for (std::size_t k = 0; k < in_grads.size(); ++k) {
        if (!in_grads[k].defined() || !node.inputs[k].requires_grad()) continue;
        const auto* key = node.inputs[k].id();
        auto found = grads.find(key);
        if (found == grads.end()) {
          grads.emplace(key, std::move(in_grads[k]));
        } else {
          found->second = add(found->second, in_grads[k]);
        }
      }
    }
  }

  std::vector<Tensor> result;
  result.reserve(targets.size());
  for (const auto& t : targets) {
    auto it = grads.find(t.id());
    if (it == grads.end()) {
      result.push_back(Tensor::zeros(t.shape()));
    } else if (!create_graph) {
      result.push_back(it->second.detach());
    } else {
      result.push_back(it->second);
    }
  }
  return result;
}

Tensor grad_penalty_kernel(const BatchMap& f, const Tensor& x, double lambda) {
  if (x.rank() < 1) throw ShapeError("grad_penalty_kernel: input needs a batch dimension");
  Tensor xin = x;
  if (!xin.requires_grad()) {
    xin = x.detach();
    xin.set_requires_grad(true);
  }
  GradModeGuard on(true);
  const Tensor scores = f(xin);
  const auto b = x.dim(0);
  const bool per_sample = (scores.rank() == 1 && scores.dim(0) == b) ||
                          (scores.rank() == 2 && scores.dim(0) == b && scores.dim(1) == 1);
  if (!per_sample) {
    throw ShapeError("grad_penalty_kernel: map must produce one score per sample, got " +
                     shape_str(scores.shape()) + " for batch " + std::to_string(b));
  }
  const Tensor grad = backward(sum(scores), {xin}, true)[0];
  const Tensor norms = l2_norm(reshape(grad, {b, -1}));
  return mul(mean(square(add(norms, -1.0))), lambda);
}

double finite_difference_check(const ScalarMap& f, const Tensor& x, double eps) {
  Tensor xin = x.detach().clone();
  xin.set_requires_grad(true);
  Tensor analytic;
  {
    GradModeGuard on(true);
    analytic = backward(f(xin), {xin})[0];
  }
  const auto A = analytic.data();
  const auto base = x.data();
  double worst = 0.0;
  NoGradGuard off;
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus(base.begin(), base.end());
    std::vector<double> minus(base.begin(), base.end());
    plus[i] += eps;
    minus[i] -= eps;
    const double fp = f(Tensor(x.shape(), std::move(plus))).item();
    const double fm = f(Tensor(x.shape(), std::move(minus))).item();
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(A[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(A[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace mvaal::ad

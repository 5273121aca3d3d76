#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <vector>

#include "mvaal/autodiff/ops.hpp"
#include "mvaal/autodiff/tensor.hpp"

namespace mvaal::ad::detail {

enum class Op {
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kExp,
  kLog,
  kSqrt,
  kSquare,
  kRelu,
  kLeakyRelu,
  kSigmoid,
  kTanh,
  kLogSigmoid,
  kMatmul,
  kTranspose,
  kConv2d,
  kConvTranspose2d,
  kConvWeightGrad,
  kMaxPool2d,
  kPoolScatter,
  kPoolGather,
  kSum,
  kSoftmax,
  kSoftmaxCrossEntropy,
  kReshape,
  kConcat,
  kSlice,
  kSliceBackward,
  kBroadcastTo,
  kSumTo,
  kL2Norm,
};

struct NodeAttrs {
  ConvAttrs conv;
  std::int64_t kh = 0;
  std::int64_t kw = 0;
  std::int64_t axis = 0;
  std::int64_t start = 0;
  double scalar = 0.0;
  std::vector<std::int64_t> axes;
  bool keepdim = false;
  Shape shape;
  std::shared_ptr<const std::vector<std::int64_t>> indices;
  std::vector<std::int64_t> sizes;
};

struct Node {
  Op op;
  std::vector<Tensor> inputs;
  Tensor output;
  NodeAttrs attrs;
};

class Graph {
 public:
  static Graph& current();

  // Appends a node if recording applies and attaches `output` to it.
  void record(Op op, std::vector<Tensor> inputs, Tensor& output, NodeAttrs attrs);
  void check_fresh(const Tensor& t) const;

  const Node& node(std::int64_t i) const { return nodes_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }
  void reset();

 private:
  // deque keeps node references stable while backward appends.
  std::deque<Node> nodes_;
  std::uint64_t generation_ = 1;
};

// Backward rule for one node: per-input gradients (undefined when the input
// does not require grad). Built from catalog ops so it can itself be recorded.
std::vector<Tensor> node_backward(const Node& node, const Tensor& grad_out);

}  // namespace mvaal::ad::detail

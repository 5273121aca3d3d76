#include <functional>

#include "mvaal/autodiff/ops.hpp"

namespace mvaal::ad {
namespace {

std::int64_t int_attr(const Attrs& attrs, std::string_view key, std::int64_t fallback) {
  auto it = attrs.find(key);
  if (it == attrs.end()) return fallback;
  if (const auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
  if (const auto* d = std::get_if<double>(&it->second)) return static_cast<std::int64_t>(*d);
  throw Error("attribute '" + std::string(key) + "' must be an integer");
}

double real_attr(const Attrs& attrs, std::string_view key, double fallback) {
  auto it = attrs.find(key);
  if (it == attrs.end()) return fallback;
  if (const auto* d = std::get_if<double>(&it->second)) return *d;
  if (const auto* v = std::get_if<std::int64_t>(&it->second)) return static_cast<double>(*v);
  throw Error("attribute '" + std::string(key) + "' must be a number");
}

std::vector<std::int64_t> list_attr(const Attrs& attrs, std::string_view key) {
  auto it = attrs.find(key);
  if (it == attrs.end()) return {};
  if (const auto* v = std::get_if<std::vector<std::int64_t>>(&it->second)) return *v;
  if (const auto* i = std::get_if<std::int64_t>(&it->second)) return {*i};
  throw Error("attribute '" + std::string(key) + "' must be an integer list");
}

ConvAttrs conv_attrs(const Attrs& attrs) {
  return ConvAttrs{int_attr(attrs, "stride", 1), int_attr(attrs, "padding", 0),
                   int_attr(attrs, "output_padding", 0)};
}

using Fn = std::function<Tensor(std::span<const Tensor>, const Attrs&)>;

void arity(std::string_view op, std::span<const Tensor> in, std::size_t n) {
  if (in.size() != n) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(n) + " inputs, got " +
                     std::to_string(in.size()));
  }
}

const std::map<std::string, Fn, std::less<>>& registry() {
  static const std::map<std::string, Fn, std::less<>> table = [] {
    std::map<std::string, Fn, std::less<>> t;
    auto binary = [&t](const char* name, Tensor (*fn)(const Tensor&, const Tensor&)) {
      t[name] = [name, fn](std::span<const Tensor> in, const Attrs&) {
        arity(name, in, 2);
        return fn(in[0], in[1]);
      };
    };
    auto unary = [&t](const char* name, Tensor (*fn)(const Tensor&)) {
      t[name] = [name, fn](std::span<const Tensor> in, const Attrs&) {
        arity(name, in, 1);
        return fn(in[0]);
      };
    };
    binary("add", &add);
    binary("sub", &sub);
    binary("mul", &mul);
    binary("div", &div);
    binary("matmul", &matmul);
    unary("neg", &neg);
    unary("exp", &exp);
    unary("log", &log);
    unary("sqrt", &sqrt);
    unary("square", &square);
    unary("relu", &relu);
    unary("sigmoid", &sigmoid);
    unary("tanh", &tanh);
    unary("log_sigmoid", &log_sigmoid);
    unary("transpose", &transpose);
    unary("softmax", &softmax);
    unary("l2_norm", &l2_norm);
    t["leaky_relu"] = [](std::span<const Tensor> in, const Attrs& a) {
      arity("leaky_relu", in, 1);
      return leaky_relu(in[0], real_attr(a, "slope", 0.01));
    };
    t["conv2d"] = [](std::span<const Tensor> in, const Attrs& a) {
      arity("conv2d", in, 2);
      return conv2d(in[0], in[1], conv_attrs(a));
    };
    t["conv_transpose2d"] = [](std::span<const Tensor> in, const Attrs& a) {
      arity("conv_transpose2d", in, 2);
      return conv_transpose2d(in[0], in[1], conv_attrs(a));
    };
    t["conv2d_weight_grad"] = [](std::span<const Tensor> in, const Attrs& a) {
      arity("conv2d_weight_grad", in, 2);
      return conv2d_weight_grad(in[0], in[1], int_attr(a, "kh", 1), int_attr(a, "kw", 1),
                                conv_attrs(a));
    };
    t["max_pool2d"] = [](std::span<const Tensor> in, const Attrs& a) {
      arity("max_pool2d", in, 1);
      const auto k = int_attr(a, "kernel", 2);
      return max_pool2d(in[0], k, int_attr(a, "stride", k));
    };
    t["sum"] = [](std::span<const Tensor> in, const Attrs& a) {
      arity("sum", in, 1);
      return sum(in[0], list_attr(a, "axes"), int_attr(a, "keepdim", 0) != 0);
    };
    t["mean"] = [](std::span<const Tensor> in, const Attrs& a) {
      arity("mean", in, 1);
      return mean(in[0], list_attr(a, "axes"), int_attr(a, "keepdim", 0) != 0);
    };
    t["softmax_cross_entropy"] = [](std::span<const Tensor> in, const Attrs& a) {
      arity("softmax_cross_entropy", in, 1);
      const auto labels = list_attr(a, "labels");
      return softmax_cross_entropy(in[0], labels);
    };
    t["reshape"] = [](std::span<const Tensor> in, const Attrs& a) {
      arity("reshape", in, 1);
      return reshape(in[0], list_attr(a, "shape"));
    };
    t["concat"] = [](std::span<const Tensor> in, const Attrs& a) {
      return concat(in, int_attr(a, "axis", 0));
    };
    t["slice"] = [](std::span<const Tensor> in, const Attrs& a) {
      arity("slice", in, 1);
      return slice(in[0], int_attr(a, "axis", 0), int_attr(a, "start", 0), int_attr(a, "end", 0));
    };
    t["broadcast"] = [](std::span<const Tensor> in, const Attrs& a) {
      arity("broadcast", in, 1);
      return broadcast_to(in[0], list_attr(a, "shape"));
    };
    t["sum_to"] = [](std::span<const Tensor> in, const Attrs& a) {
      arity("sum_to", in, 1);
      return sum_to(in[0], list_attr(a, "shape"));
    };
    return t;
  }();
  return table;
}

}  // namespace

Tensor apply_primitive(std::string_view op, std::span<const Tensor> inputs, const Attrs& attrs) {
  const auto& table = registry();
  auto it = table.find(op);
  if (it == table.end()) throw UnknownPrimitiveError("unknown primitive '" + std::string(op) + "'");
  return it->second(inputs, attrs);
}

std::vector<std::string> primitive_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

}  // namespace mvaal::ad

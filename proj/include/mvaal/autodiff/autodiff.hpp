#pragma once

#include <functional>
#include <vector>

#include "mvaal/autodiff/ops.hpp"
#include "mvaal/autodiff/tensor.hpp"

namespace mvaal::ad {

// Reverse-mode gradient of a scalar root w.r.t. each target. Targets that
// the root does not depend on receive zeros. With create_graph the backward
// pass is itself recorded from catalog primitives, so the returned gradients
// can be differentiated again.
std::vector<Tensor> backward(const Tensor& root, const std::vector<Tensor>& targets,
                             bool create_graph = false);

using BatchMap = std::function<Tensor(const Tensor&)>;

// lambda * mean_b (||d f(x)_b / d x_b||_2 - 1)^2 for a map producing one score
// per sample ([B] or [B,1]). The result stays differentiable w.r.t. whatever
// parameters f closes over.
Tensor grad_penalty_kernel(const BatchMap& f, const Tensor& x, double lambda);

using ScalarMap = std::function<Tensor(const Tensor&)>;

// Max relative error between backward() and central differences of f at x.
// Denominator is max(|analytic|, |numeric|, 1e-8).
double finite_difference_check(const ScalarMap& f, const Tensor& x, double eps);

}  // namespace mvaal::ad

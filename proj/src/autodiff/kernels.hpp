#pragma once

#include <cstdint>
#include <vector>

#include "mvaal/autodiff/tensor.hpp"

// Raw numeric loops behind the primitives. Every reduction runs in a fixed
// order that depends only on shapes.
namespace mvaal::ad::kernels {

struct ConvGeom {
  std::int64_t n, c, h, w;      // conv input
  std::int64_t o, kh, kw;       // filters
  std::int64_t ho, wo;          // conv output
  std::int64_t stride, padding;

  std::int64_t k() const { return c * kh * kw; }
  std::int64_t in_plane() const { return h * w; }
  std::int64_t out_plane() const { return ho * wo; }
};

// y[N,O,Ho,Wo] = conv(x[N,C,H,W], w[O,C,kh,kw])
void conv_forward(const ConvGeom& g, const double* x, const double* w, double* y);
// x[N,C,H,W] += adjoint of conv applied to y[N,O,Ho,Wo]
void conv_adjoint(const ConvGeom& g, const double* y, const double* w, double* x);
// dw[O,C,kh,kw] = sum_n y[n] * col(x[n])^T
void conv_weight_grad(const ConvGeom& g, const double* x, const double* y, double* dw);

// [m,k] x [k,n]
void gemm(std::int64_t m, std::int64_t k, std::int64_t n, const double* a, const double* b,
          double* c);

}  // namespace mvaal::ad::kernels

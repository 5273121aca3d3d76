#include "kernels.hpp"

#include <algorithm>

namespace mvaal::ad::kernels {
namespace {

// Samples per im2col chunk: small spatial planes are batched so the inner
// loop stays long enough to vectorize.
std::int64_t chunk_size(const ConvGeom& g) {
  const std::int64_t target = 256;
  std::int64_t nb = (target + g.out_plane() - 1) / g.out_plane();
  return std::clamp<std::int64_t>(nb, 1, g.n);
}

// col[k, off + p] for one sample; row stride ld.
void im2col(const ConvGeom& g, const double* x, double* col, std::int64_t ld, std::int64_t off) {
  for (std::int64_t c = 0; c < g.c; ++c) {
    const double* plane = x + c * g.in_plane();
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * ld + off;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t y = oy * g.stride - g.padding + i;
          double* dst = row + oy * g.wo;
          if (y < 0 || y >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = plane + y * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t xx = ox * g.stride - g.padding + j;
            dst[ox] = (xx >= 0 && xx < g.w) ? src[xx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeom& g, const double* col, std::int64_t ld, std::int64_t off, double* x) {
  for (std::int64_t c = 0; c < g.c; ++c) {
    double* plane = x + c * g.in_plane();
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * ld + off;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t y = oy * g.stride - g.padding + i;
          if (y < 0 || y >= g.h) continue;
          double* dst = plane + y * g.w;
          const double* src = row + oy * g.wo;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t xx = ox * g.stride - g.padding + j;
            if (xx >= 0 && xx < g.w) dst[xx] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

void gemm(std::int64_t m, std::int64_t k, std::int64_t n, const double* a, const double* b,
          double* c) {
  std::fill(c, c + m * n, 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void conv_forward(const ConvGeom& g, const double* x, const double* w, double* y) {
  const std::int64_t nb_max = chunk_size(g);
  const std::int64_t K = g.k();
  const std::int64_t P = g.out_plane();
  std::vector<double> col, out;
  for (std::int64_t n0 = 0; n0 < g.n; n0 += nb_max) {
    const std::int64_t nb = std::min(nb_max, g.n - n0);
    const std::int64_t ld = nb * P;
    col.resize(static_cast<std::size_t>(K * ld));
    out.resize(static_cast<std::size_t>(g.o * ld));
    for (std::int64_t j = 0; j < nb; ++j) {
      im2col(g, x + (n0 + j) * g.c * g.in_plane(), col.data(), ld, j * P);
    }
    gemm(g.o, K, ld, w, col.data(), out.data());
    for (std::int64_t j = 0; j < nb; ++j) {
      double* dst = y + (n0 + j) * g.o * P;
      for (std::int64_t o = 0; o < g.o; ++o) {
        std::copy_n(out.data() + o * ld + j * P, P, dst + o * P);
      }
    }
  }
}

void conv_adjoint(const ConvGeom& g, const double* y, const double* w, double* x) {
  const std::int64_t nb_max = chunk_size(g);
  const std::int64_t K = g.k();
  const std::int64_t P = g.out_plane();
  std::vector<double> col, in;
  for (std::int64_t n0 = 0; n0 < g.n; n0 += nb_max) {
    const std::int64_t nb = std::min(nb_max, g.n - n0);
    const std::int64_t ld = nb * P;
    in.resize(static_cast<std::size_t>(g.o * ld));
    for (std::int64_t j = 0; j < nb; ++j) {
      const double* src = y + (n0 + j) * g.o * P;
      for (std::int64_t o = 0; o < g.o; ++o) {
        std::copy_n(src + o * P, P, in.data() + o * ld + j * P);
      }
    }
    col.assign(static_cast<std::size_t>(K * ld), 0.0);
    for (std::int64_t o = 0; o < g.o; ++o) {
      const double* yrow = in.data() + o * ld;
      for (std::int64_t kk = 0; kk < K; ++kk) {
        const double wv = w[o * K + kk];
        double* crow = col.data() + kk * ld;
        for (std::int64_t q = 0; q < ld; ++q) crow[q] += wv * yrow[q];
      }
    }
    for (std::int64_t j = 0; j < nb; ++j) {
      col2im(g, col.data(), ld, j * P, x + (n0 + j) * g.c * g.in_plane());
    }
  }
}

void conv_weight_grad(const ConvGeom& g, const double* x, const double* y, double* dw) {
  const std::int64_t nb_max = chunk_size(g);
  const std::int64_t K = g.k();
  const std::int64_t P = g.out_plane();
  std::fill(dw, dw + g.o * K, 0.0);
  std::vector<double> col, colt, in;
  for (std::int64_t n0 = 0; n0 < g.n; n0 += nb_max) {
    const std::int64_t nb = std::min(nb_max, g.n - n0);
    const std::int64_t ld = nb * P;
    col.resize(static_cast<std::size_t>(K * ld));
    in.resize(static_cast<std::size_t>(g.o * ld));
    for (std::int64_t j = 0; j < nb; ++j) {
      im2col(g, x + (n0 + j) * g.c * g.in_plane(), col.data(), ld, j * P);
      const double* src = y + (n0 + j) * g.o * P;
      for (std::int64_t o = 0; o < g.o; ++o) {
        std::copy_n(src + o * P, P, in.data() + o * ld + j * P);
      }
    }
    // dw += in (O x ld) * col^T (ld x K), accumulated row-wise so the inner
    // loop runs over K.
    colt.resize(static_cast<std::size_t>(ld * K));
    for (std::int64_t kk = 0; kk < K; ++kk) {
      for (std::int64_t q = 0; q < ld; ++q) colt[q * K + kk] = col[kk * ld + q];
    }
    for (std::int64_t o = 0; o < g.o; ++o) {
      double* drow = dw + o * K;
      const double* yrow = in.data() + o * ld;
      for (std::int64_t q = 0; q < ld; ++q) {
        const double yv = yrow[q];
        const double* crow = colt.data() + q * K;
        for (std::int64_t kk = 0; kk < K; ++kk) drow[kk] += yv * crow[kk];
      }
    }
  }
}

}  // namespace mvaal::ad::kernels

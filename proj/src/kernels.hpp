#pragma once

#include <cstddef>

namespace genspec::kernels {

// C[M,N] (+)= A[M,K] * B[K,N], row-major. The k-accumulation order for each
// output element is ascending regardless of M, N or blocking, so results do
// not depend on how rows are batched.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate);

/// dst[cols, rows] = src[rows, cols]^T
void transpose(const double* src, std::size_t rows, std::size_t cols, double* dst);

struct ConvGeom {
  std::size_t channels, height, width, kh, kw, stride, pad;
  std::size_t out_h() const { return (height + 2 * pad - kh) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad - kw) / stride + 1; }
};

/// cols[(c*kh+i)*kw+j, oh*Wo+ow] for one image.
void im2col(const double* image, const ConvGeom& g, double* cols);
/// Adjoint of im2col; accumulates into image.
void col2im(const double* cols, const ConvGeom& g, double* image);

/// Fixed-tree pairwise summation.
double pairwise_sum(const double* x, std::size_t n);

}  // namespace genspec::kernels

#include "kernels.hpp"

#include <algorithm>

namespace genspec::kernels {

namespace {
constexpr std::size_t kBlockK = 128;
constexpr std::size_t kBlockN = 512;
}  // namespace

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t k1 = std::min(k, k0 + kBlockK);
    for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
      const std::size_t j1 = std::min(n, j0 + kBlockN);
      for (std::size_t i = 0; i < m; ++i) {
        double* __restrict crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t kk = k0; kk < k1; ++kk) {
          const double av = arow[kk];
          const double* __restrict brow = b + kk * n;
          for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

void transpose(const double* src, std::size_t rows, std::size_t cols, double* dst) {
  constexpr std::size_t tile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += tile) {
    for (std::size_t c0 = 0; c0 < cols; c0 += tile) {
      const std::size_t r1 = std::min(rows, r0 + tile), c1 = std::min(cols, c0 + tile);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t cc = c0; cc < c1; ++cc) dst[cc * rows + r] = src[r * cols + cc];
      }
    }
  }
}

void im2col(const double* image, const ConvGeom& g, double* cols) {
  const std::size_t Ho = g.out_h(), Wo = g.out_w(), P = Ho * Wo;
  const auto H = static_cast<std::ptrdiff_t>(g.height), W = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = image + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * P;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oh * Wo;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          const double* src = plane + ih * W;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeom& g, double* image) {
  const std::size_t Ho = g.out_h(), Wo = g.out_w(), P = Ho * Wo;
  const auto H = static_cast<std::ptrdiff_t>(g.height), W = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = image + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * P;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= H) continue;
          double* dst = plane + ih * W;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            if (iw >= 0 && iw < W) dst[iw] += row[oh * Wo + ow];
          }
        }
      }
    }
  }
}

double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 16) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

}  // namespace genspec::kernels

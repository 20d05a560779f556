#include "xbench/kernels/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace xbench::kernels {
namespace {

void sgemm_scalar(Trans ta, Trans tb, int m, int n, int k, float alpha,
                  const float* a, int lda, const float* b, int ldb, float beta,
                  float* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<long>(i) * ldc;
    if (beta == 0.0f) {
      std::fill(crow, crow + n, 0.0f);
    } else if (beta != 1.0f) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (k == 0 || alpha == 0.0f) return;
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<long>(i) * ldc;
    for (int p = 0; p < k; ++p) {
      const float av = alpha * (ta == Trans::No ? a[static_cast<long>(i) * lda + p]
                                                : a[static_cast<long>(p) * lda + i]);
      if (tb == Trans::No) {
        const float* brow = b + static_cast<long>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<long>(j) * ldb + p];
      }
    }
  }
}

void softmax_rows_scalar(float* x, int rows, int cols, int ld) {
  for (int r = 0; r < rows; ++r) {
    float* row = x + static_cast<long>(r) * ld;
    float mx = row[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    float sum = 0.0f;
    for (int j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const float inv = 1.0f / sum;
    for (int j = 0; j < cols; ++j) row[j] *= inv;
  }
}

void layernorm_rows_scalar(const float* x, const float* gamma,
                           const float* beta, float eps, float* y, float* mean,
                           float* rstd, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const float* xr = x + static_cast<long>(r) * cols;
    float* yr = y + static_cast<long>(r) * cols;
    float mu = 0.0f;
    for (int j = 0; j < cols; ++j) mu += xr[j];
    mu /= static_cast<float>(cols);
    float var = 0.0f;
    for (int j = 0; j < cols; ++j) {
      const float d = xr[j] - mu;
      var += d * d;
    }
    var /= static_cast<float>(cols);
    const float rs = 1.0f / std::sqrt(var + eps);
    for (int j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
    if (mean) mean[r] = mu;
    if (rstd) rstd[r] = rs;
  }
}

constexpr float kInvSqrt2 = 0.70710678118654752f;
constexpr float kInvSqrt2Pi = 0.39894228040143268f;

void gelu_forward_scalar(const float* x, float* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = 0.5f * x[i] * (1.0f + std::erf(x[i] * kInvSqrt2));
}

void gelu_backward_scalar(const float* x, const float* dy, float* dx, int n) {
  for (int i = 0; i < n; ++i) {
    const float cdf = 0.5f * (1.0f + std::erf(x[i] * kInvSqrt2));
    const float pdf = kInvSqrt2Pi * std::exp(-0.5f * x[i] * x[i]);
    dx[i] = dy[i] * (cdf + x[i] * pdf);
  }
}

void axpy_scalar(int n, float alpha, const float* x, float* y) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

float dot_scalar(int n, const float* x, const float* y) {
  float s = 0.0f;
  for (int i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

constexpr KernelTable kScalar{
    sgemm_scalar,        softmax_rows_scalar, layernorm_rows_scalar,
    gelu_forward_scalar, gelu_backward_scalar, axpy_scalar,
    dot_scalar,
};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace xbench::kernels

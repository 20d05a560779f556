// AVX2/FMA variants of the kernel table. This translation unit is the only
// one compiled with -mavx2 -mfma; it is entered only after CPUID confirms
// support.
#include "xbench/kernels/kernels.hpp"

#if defined(XBENCH_HAVE_AVX2)

#include <immintrin.h>

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <vector>

namespace xbench::kernels {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 s = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, s);
  s = _mm_add_ss(s, sh);
  return _mm_cvtss_f32(s);
}

inline float hmax(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_max_ps(lo, hi);
  lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_max_ss(lo, _mm_movehdup_ps(lo));
  return _mm_cvtss_f32(lo);
}

// Cephes-style exp, relative error ~1e-7 over the clamped range.
inline __m256 exp_ps(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647949f);
  const __m256 lo = _mm256_set1_ps(-87.3365447505531f);
  x = _mm256_min_ps(_mm256_max_ps(x, lo), hi);
  __m256 fx = _mm256_fmadd_ps(x, _mm256_set1_ps(1.44269504088896341f),
                              _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(0.693359375f), x);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(-2.12194440e-4f), x);
  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  const __m256 x2 = _mm256_mul_ps(x, x);
  y = _mm256_fmadd_ps(y, x2, _mm256_add_ps(x, _mm256_set1_ps(1.0f)));
  __m256i e = _mm256_cvttps_epi32(fx);
  e = _mm256_slli_epi32(_mm256_add_epi32(e, _mm256_set1_epi32(127)), 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(e));
}

// Abramowitz-Stegun 7.1.26, absolute error < 1.5e-7.
inline __m256 erf_ps(__m256 x) {
  const __m256 sign_mask = _mm256_set1_ps(-0.0f);
  const __m256 sign = _mm256_and_ps(x, sign_mask);
  const __m256 ax = _mm256_andnot_ps(sign_mask, x);
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 t = _mm256_div_ps(
      one, _mm256_fmadd_ps(_mm256_set1_ps(0.3275911f), ax, one));
  __m256 p = _mm256_set1_ps(1.061405429f);
  p = _mm256_fmadd_ps(p, t, _mm256_set1_ps(-1.453152027f));
  p = _mm256_fmadd_ps(p, t, _mm256_set1_ps(1.421413741f));
  p = _mm256_fmadd_ps(p, t, _mm256_set1_ps(-0.284496736f));
  p = _mm256_fmadd_ps(p, t, _mm256_set1_ps(0.254829592f));
  p = _mm256_mul_ps(p, t);
  const __m256 e = exp_ps(_mm256_sub_ps(_mm256_setzero_ps(), _mm256_mul_ps(ax, ax)));
  const __m256 r = _mm256_fnmadd_ps(p, e, one);
  return _mm256_or_ps(r, sign);
}

// ---------------------------------------------------------------------------
// GEMM: packed panels, 6x16 register-blocked micro-kernel.

constexpr int kMR = 6;
constexpr int kNR = 16;
constexpr int kKC = 256;
constexpr int kMC = 96;
constexpr int kNC = 1024;

inline float load_a(Trans ta, const float* a, int lda, int i, int p) {
  return ta == Trans::No ? a[static_cast<long>(i) * lda + p]
                         : a[static_cast<long>(p) * lda + i];
}

void pack_a(Trans ta, const float* a, int lda, int i0, int mc, int p0, int kc,
            float alpha, float* buf) {
  const int panels = (mc + kMR - 1) / kMR;
  for (int ip = 0; ip < panels; ++ip) {
    float* dst = buf + static_cast<long>(ip) * kc * kMR;
    const int rows = std::min(kMR, mc - ip * kMR);
    for (int p = 0; p < kc; ++p) {
      for (int r = 0; r < kMR; ++r) {
        dst[p * kMR + r] =
            r < rows ? alpha * load_a(ta, a, lda, i0 + ip * kMR + r, p0 + p) : 0.0f;
      }
    }
  }
}

void pack_b(Trans tb, const float* b, int ldb, int p0, int kc, int j0, int nc,
            float* buf) {
  const int panels = (nc + kNR - 1) / kNR;
  for (int jp = 0; jp < panels; ++jp) {
    float* dst = buf + static_cast<long>(jp) * kc * kNR;
    const int cols = std::min(kNR, nc - jp * kNR);
    const int jbase = j0 + jp * kNR;
    if (tb == Trans::No) {
      for (int p = 0; p < kc; ++p) {
        const float* src = b + static_cast<long>(p0 + p) * ldb + jbase;
        float* d = dst + p * kNR;
        if (cols == kNR) {
          _mm256_storeu_ps(d, _mm256_loadu_ps(src));
          _mm256_storeu_ps(d + 8, _mm256_loadu_ps(src + 8));
        } else {
          for (int c = 0; c < kNR; ++c) d[c] = c < cols ? src[c] : 0.0f;
        }
      }
    } else {
      for (int p = 0; p < kc; ++p) {
        float* d = dst + p * kNR;
        for (int c = 0; c < kNR; ++c) {
          d[c] = c < cols ? b[static_cast<long>(jbase + c) * ldb + p0 + p] : 0.0f;
        }
      }
    }
  }
}

void micro_kernel(int kc, const float* pa, const float* pb, float* c, int ldc,
                  int mr, int nr) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
  for (int p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_load_ps(pb);
    const __m256 b1 = _mm256_load_ps(pb + 8);
    __m256 a = _mm256_broadcast_ss(pa + 0);
    c00 = _mm256_fmadd_ps(a, b0, c00);
    c01 = _mm256_fmadd_ps(a, b1, c01);
    a = _mm256_broadcast_ss(pa + 1);
    c10 = _mm256_fmadd_ps(a, b0, c10);
    c11 = _mm256_fmadd_ps(a, b1, c11);
    a = _mm256_broadcast_ss(pa + 2);
    c20 = _mm256_fmadd_ps(a, b0, c20);
    c21 = _mm256_fmadd_ps(a, b1, c21);
    a = _mm256_broadcast_ss(pa + 3);
    c30 = _mm256_fmadd_ps(a, b0, c30);
    c31 = _mm256_fmadd_ps(a, b1, c31);
    a = _mm256_broadcast_ss(pa + 4);
    c40 = _mm256_fmadd_ps(a, b0, c40);
    c41 = _mm256_fmadd_ps(a, b1, c41);
    a = _mm256_broadcast_ss(pa + 5);
    c50 = _mm256_fmadd_ps(a, b0, c50);
    c51 = _mm256_fmadd_ps(a, b1, c51);
    pa += kMR;
    pb += kNR;
  }
  alignas(32) float tile[kMR][kNR];
  _mm256_store_ps(tile[0], c00); _mm256_store_ps(tile[0] + 8, c01);
  _mm256_store_ps(tile[1], c10); _mm256_store_ps(tile[1] + 8, c11);
  _mm256_store_ps(tile[2], c20); _mm256_store_ps(tile[2] + 8, c21);
  _mm256_store_ps(tile[3], c30); _mm256_store_ps(tile[3] + 8, c31);
  _mm256_store_ps(tile[4], c40); _mm256_store_ps(tile[4] + 8, c41);
  _mm256_store_ps(tile[5], c50); _mm256_store_ps(tile[5] + 8, c51);
  if (nr == kNR) {
    for (int r = 0; r < mr; ++r) {
      float* crow = c + static_cast<long>(r) * ldc;
      _mm256_storeu_ps(crow, _mm256_add_ps(_mm256_loadu_ps(crow), _mm256_load_ps(tile[r])));
      _mm256_storeu_ps(crow + 8,
                       _mm256_add_ps(_mm256_loadu_ps(crow + 8), _mm256_load_ps(tile[r] + 8)));
    }
  } else {
    for (int r = 0; r < mr; ++r) {
      float* crow = c + static_cast<long>(r) * ldc;
      for (int j = 0; j < nr; ++j) crow[j] += tile[r][j];
    }
  }
}

struct PackBuffers {
  std::vector<float> a, b;
  float* aligned(std::vector<float>& v, size_t n) {
    if (v.size() < n + 8) v.resize(n + 8);
    auto addr = reinterpret_cast<std::uintptr_t>(v.data());
    return v.data() + ((32 - addr % 32) % 32) / sizeof(float);
  }
};

void sgemm_avx2(Trans ta, Trans tb, int m, int n, int k, float alpha,
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
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0f) return;

  thread_local PackBuffers bufs;
  float* pb = bufs.aligned(bufs.b, static_cast<size_t>(kKC) * (kNC + kNR));
  float* pa = bufs.aligned(bufs.a, static_cast<size_t>(kKC) * (kMC + kMR));

  for (int jc = 0; jc < n; jc += kNC) {
    const int nc = std::min(kNC, n - jc);
    for (int pc = 0; pc < k; pc += kKC) {
      const int kc = std::min(kKC, k - pc);
      pack_b(tb, b, ldb, pc, kc, jc, nc, pb);
      for (int ic = 0; ic < m; ic += kMC) {
        const int mc = std::min(kMC, m - ic);
        pack_a(ta, a, lda, ic, mc, pc, kc, alpha, pa);
        for (int jr = 0; jr < nc; jr += kNR) {
          const int nr = std::min(kNR, nc - jr);
          const float* bp = pb + static_cast<long>(jr / kNR) * kc * kNR;
          for (int ir = 0; ir < mc; ir += kMR) {
            const int mr = std::min(kMR, mc - ir);
            const float* ap = pa + static_cast<long>(ir / kMR) * kc * kMR;
            micro_kernel(kc, ap, bp, c + static_cast<long>(ic + ir) * ldc + jc + jr,
                         ldc, mr, nr);
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------

void softmax_rows_avx2(float* x, int rows, int cols, int ld) {
  for (int r = 0; r < rows; ++r) {
    float* row = x + static_cast<long>(r) * ld;
    int j = 0;
    __m256 vmax = _mm256_set1_ps(-INFINITY);
    for (; j + 8 <= cols; j += 8) vmax = _mm256_max_ps(vmax, _mm256_loadu_ps(row + j));
    float mx = hmax(vmax);
    for (; j < cols; ++j) mx = std::max(mx, row[j]);
    const __m256 vm = _mm256_set1_ps(mx);
    __m256 vsum = _mm256_setzero_ps();
    j = 0;
    for (; j + 8 <= cols; j += 8) {
      const __m256 e = exp_ps(_mm256_sub_ps(_mm256_loadu_ps(row + j), vm));
      _mm256_storeu_ps(row + j, e);
      vsum = _mm256_add_ps(vsum, e);
    }
    float sum = hsum(vsum);
    for (; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const float inv = 1.0f / sum;
    const __m256 vinv = _mm256_set1_ps(inv);
    j = 0;
    for (; j + 8 <= cols; j += 8) _mm256_storeu_ps(row + j, _mm256_mul_ps(_mm256_loadu_ps(row + j), vinv));
    for (; j < cols; ++j) row[j] *= inv;
  }
}

void layernorm_rows_avx2(const float* x, const float* gamma, const float* beta,
                         float eps, float* y, float* mean, float* rstd, int rows,
                         int cols) {
  for (int r = 0; r < rows; ++r) {
    const float* xr = x + static_cast<long>(r) * cols;
    float* yr = y + static_cast<long>(r) * cols;
    __m256 acc = _mm256_setzero_ps();
    int j = 0;
    for (; j + 8 <= cols; j += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(xr + j));
    float mu = hsum(acc);
    for (; j < cols; ++j) mu += xr[j];
    mu /= static_cast<float>(cols);
    const __m256 vmu = _mm256_set1_ps(mu);
    acc = _mm256_setzero_ps();
    j = 0;
    for (; j + 8 <= cols; j += 8) {
      const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(xr + j), vmu);
      acc = _mm256_fmadd_ps(d, d, acc);
    }
    float var = hsum(acc);
    for (; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<float>(cols);
    const float rs = 1.0f / std::sqrt(var + eps);
    const __m256 vrs = _mm256_set1_ps(rs);
    j = 0;
    for (; j + 8 <= cols; j += 8) {
      const __m256 d = _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(xr + j), vmu), vrs);
      _mm256_storeu_ps(yr + j, _mm256_fmadd_ps(d, _mm256_loadu_ps(gamma + j),
                                               _mm256_loadu_ps(beta + j)));
    }
    for (; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
    if (mean) mean[r] = mu;
    if (rstd) rstd[r] = rs;
  }
}

constexpr float kInvSqrt2 = 0.70710678118654752f;
constexpr float kInvSqrt2Pi = 0.39894228040143268f;

void gelu_forward_avx2(const float* x, float* y, int n) {
  const __m256 half = _mm256_set1_ps(0.5f);
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 s = _mm256_set1_ps(kInvSqrt2);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 cdf = _mm256_mul_ps(half, _mm256_add_ps(one, erf_ps(_mm256_mul_ps(v, s))));
    _mm256_storeu_ps(y + i, _mm256_mul_ps(v, cdf));
  }
  for (; i < n; ++i) y[i] = 0.5f * x[i] * (1.0f + std::erf(x[i] * kInvSqrt2));
}

void gelu_backward_avx2(const float* x, const float* dy, float* dx, int n) {
  const __m256 half = _mm256_set1_ps(0.5f);
  const __m256 mhalf = _mm256_set1_ps(-0.5f);
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 s = _mm256_set1_ps(kInvSqrt2);
  const __m256 k = _mm256_set1_ps(kInvSqrt2Pi);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 cdf = _mm256_mul_ps(half, _mm256_add_ps(one, erf_ps(_mm256_mul_ps(v, s))));
    const __m256 pdf = _mm256_mul_ps(k, exp_ps(_mm256_mul_ps(mhalf, _mm256_mul_ps(v, v))));
    const __m256 d = _mm256_fmadd_ps(v, pdf, cdf);
    _mm256_storeu_ps(dx + i, _mm256_mul_ps(_mm256_loadu_ps(dy + i), d));
  }
  for (; i < n; ++i) {
    const float cdf = 0.5f * (1.0f + std::erf(x[i] * kInvSqrt2));
    const float pdf = kInvSqrt2Pi * std::exp(-0.5f * x[i] * x[i]);
    dx[i] = dy[i] * (cdf + x[i] * pdf);
  }
}

void axpy_avx2(int n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

float dot_avx2(int n, const float* x, const float* y) {
  __m256 acc = _mm256_setzero_ps();
  int i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
  float s = hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

constexpr KernelTable kAvx2{
    sgemm_avx2,        softmax_rows_avx2, layernorm_rows_avx2,
    gelu_forward_avx2, gelu_backward_avx2, axpy_avx2,
    dot_avx2,
};

}  // namespace

const KernelTable* avx2_table() { return &kAvx2; }

}  // namespace xbench::kernels

#else

namespace xbench::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace xbench::kernels

#endif

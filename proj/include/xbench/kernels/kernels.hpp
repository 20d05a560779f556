#pragma once
// Numeric inner loops used by the transformer engine.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2/FMA variant. The variant is chosen once at startup from CPUID and may
// be forced with XBENCH_ISA=scalar|avx2. All matrices are row-major.

#include <string_view>

namespace xbench::kernels {

enum class Isa { Scalar, Avx2 };

enum class Trans { No, Yes };

struct KernelTable {
  // C = alpha * op(A) * op(B) + beta * C, op(A) is m x k, op(B) is k x n.
  void (*sgemm)(Trans ta, Trans tb, int m, int n, int k, float alpha,
                const float* a, int lda, const float* b, int ldb, float beta,
                float* c, int ldc);
  // In-place numerically stable softmax over each row of a rows x cols block.
  void (*softmax_rows)(float* x, int rows, int cols, int ld);
  // y = (x - mean) * rstd * gamma + beta per row; writes per-row mean/rstd.
  void (*layernorm_rows)(const float* x, const float* gamma, const float* beta,
                         float eps, float* y, float* mean, float* rstd,
                         int rows, int cols);
  // Exact (erf) GELU and its derivative: dx = dy * gelu'(x).
  void (*gelu_forward)(const float* x, float* y, int n);
  void (*gelu_backward)(const float* x, const float* dy, float* dx, int n);
  // y += alpha * x
  void (*axpy)(int n, float alpha, const float* x, float* y);
  float (*dot)(int n, const float* x, const float* y);
};

const KernelTable& scalar_table();
// Returns nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_table();

bool isa_supported(Isa isa);
Isa detected_isa();
Isa active_isa();
void set_active_isa(Isa isa);
std::string_view isa_name(Isa isa);
const KernelTable& table(Isa isa);

inline const KernelTable& active() { return table(active_isa()); }

inline void sgemm(Trans ta, Trans tb, int m, int n, int k, float alpha,
                  const float* a, int lda, const float* b, int ldb, float beta,
                  float* c, int ldc) {
  active().sgemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline void softmax_rows(float* x, int rows, int cols, int ld) {
  active().softmax_rows(x, rows, cols, ld);
}
inline void layernorm_rows(const float* x, const float* gamma,
                           const float* beta, float eps, float* y, float* mean,
                           float* rstd, int rows, int cols) {
  active().layernorm_rows(x, gamma, beta, eps, y, mean, rstd, rows, cols);
}
inline void gelu_forward(const float* x, float* y, int n) {
  active().gelu_forward(x, y, n);
}
inline void gelu_backward(const float* x, const float* dy, float* dx, int n) {
  active().gelu_backward(x, dy, dx, n);
}
inline void axpy(int n, float alpha, const float* x, float* y) {
  active().axpy(n, alpha, x, y);
}
inline float dot(int n, const float* x, const float* y) {
  return active().dot(n, x, y);
}

}  // namespace xbench::kernels

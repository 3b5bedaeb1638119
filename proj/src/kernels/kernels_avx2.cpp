// Compiled with -mavx2 -mfma. Nothing here may run before
// cpu_supports_avx2() has been checked.
#include "bd/kernels.hpp"

#include <immintrin.h>

namespace bd::kernels::avx2 {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot(const double* a, const double* b, std::size_t d) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 8 <= d; k += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k + 4), _mm256_loadu_pd(b + k + 4), acc1);
  }
  for (; k + 4 <= d; k += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; k < d; ++k) s += a[k] * b[k];
  return s;
}

void score_items(const double* user, const double* items, const double* bias,
                 std::size_t m, std::size_t d, double* out) {
  for (std::size_t j = 0; j < m; ++j) {
    const double s = dot(user, items + j * d, d);
    out[j] = bias ? s + bias[j] : s;
  }
}

void axpy(double alpha, const double* x, double* y, std::size_t d) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t k = 0;
  for (; k + 4 <= d; k += 4) {
    // Separate multiply and add keep the result bit-identical to the scalar loop.
    __m256d prod = _mm256_mul_pd(a, _mm256_loadu_pd(x + k));
    _mm256_storeu_pd(y + k, _mm256_add_pd(_mm256_loadu_pd(y + k), prod));
  }
  for (; k < d; ++k) y[k] += alpha * x[k];
}

void adam_update(double* param, double* m1, double* m2, const double* grad, std::size_t d,
                 const AdamCoeffs& c) {
  const __m256d b1 = _mm256_set1_pd(c.beta1);
  const __m256d b2 = _mm256_set1_pd(c.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - c.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - c.beta2);
  const __m256d bc1 = _mm256_set1_pd(c.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(c.bias_correction2);
  const __m256d lr = _mm256_set1_pd(c.lr);
  const __m256d eps = _mm256_set1_pd(c.eps);
  std::size_t k = 0;
  for (; k + 4 <= d; k += 4) {
    const __m256d g = _mm256_loadu_pd(grad + k);
    __m256d mm = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m1 + k)), _mm256_mul_pd(omb1, g));
    __m256d vv = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(m2 + k)),
                               _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m1 + k, mm);
    _mm256_storeu_pd(m2 + k, vv);
    const __m256d m_hat = _mm256_div_pd(mm, bc1);
    const __m256d v_hat = _mm256_div_pd(vv, bc2);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lr, m_hat),
                                       _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps));
    _mm256_storeu_pd(param + k, _mm256_sub_pd(_mm256_loadu_pd(param + k), step));
  }
  if (k < d) {
    AdamCoeffs tail = c;
    const KernelTable& s = scalar_table();
    s.adam_update(param + k, m1 + k, m2 + k, grad + k, d - k, tail);
  }
}

}  // namespace

const KernelTable& table() {
  static const KernelTable t{dot, score_items, axpy, adam_update};
  return t;
}

}  // namespace bd::kernels::avx2

#include "bd/kernels.hpp"

#include <cmath>

namespace bd::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += a[k] * b[k];
  return s;
}

void score_items_scalar(const double* user, const double* items, const double* bias,
                        std::size_t m, std::size_t d, double* out) {
  for (std::size_t j = 0; j < m; ++j) {
    double s = dot_scalar(user, items + j * d, d);
    out[j] = bias ? s + bias[j] : s;
  }
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t d) {
  for (std::size_t k = 0; k < d; ++k) y[k] += alpha * x[k];
}

void adam_update_scalar(double* param, double* m1, double* m2, const double* grad,
                        std::size_t d, const AdamCoeffs& c) {
  const double one_m_b1 = 1.0 - c.beta1;
  const double one_m_b2 = 1.0 - c.beta2;
  for (std::size_t k = 0; k < d; ++k) {
    const double g = grad[k];
    m1[k] = c.beta1 * m1[k] + one_m_b1 * g;
    m2[k] = c.beta2 * m2[k] + one_m_b2 * (g * g);
    const double m_hat = m1[k] / c.bias_correction1;
    const double v_hat = m2[k] / c.bias_correction2;
    param[k] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{dot_scalar, score_items_scalar, axpy_scalar,
                                 adam_update_scalar};
  return table;
}

}  // namespace bd::kernels

#pragma once

// Dense inner loops of the recommender: dot products, item scoring, row
// updates and the Adam moment update. Every kernel has a portable scalar
// reference implementation and, on x86-64, an AVX2/FMA variant chosen at
// runtime. The scalar variant is the oracle for the vector one.

#include <cstddef>
#include <string_view>

namespace bd::kernels {

enum class Isa { scalar, avx2 };

struct AdamCoeffs {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t d);
  // out[j] = items[j,:] . user + (bias ? bias[j] : 0) for j in [0, m)
  void (*score_items)(const double* user, const double* items, const double* bias,
                      std::size_t m, std::size_t d, double* out);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t d);
  void (*adam_update)(double* param, double* m1, double* m2, const double* grad,
                      std::size_t d, const AdamCoeffs& c);
};

const KernelTable& scalar_table();
// Null when the build or the host CPU lacks AVX2+FMA.
const KernelTable* avx2_table();

bool cpu_supports_avx2();

// Active table. Defaults to the best supported ISA unless BD_FORCE_SCALAR is
// set in the environment.
const KernelTable& active();
Isa active_isa();
// Returns false (and leaves the selection unchanged) if `isa` is unavailable.
bool select_isa(Isa isa);
std::string_view isa_name(Isa isa);

inline double dot(const double* a, const double* b, std::size_t d) {
  return active().dot(a, b, d);
}
inline void score_items(const double* user, const double* items, const double* bias,
                        std::size_t m, std::size_t d, double* out) {
  active().score_items(user, items, bias, m, d, out);
}
inline void axpy(double alpha, const double* x, double* y, std::size_t d) {
  active().axpy(alpha, x, y, d);
}
inline void adam_update(double* param, double* m1, double* m2, const double* grad,
                        std::size_t d, const AdamCoeffs& c) {
  active().adam_update(param, m1, m2, grad, d, c);
}

}  // namespace bd::kernels

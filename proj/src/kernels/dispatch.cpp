#include "bd/kernels.hpp"

#include <cstdlib>

namespace bd::kernels {

#if defined(BD_HAVE_AVX2_KERNELS)
namespace avx2 {
const KernelTable& table();
}
#endif

bool cpu_supports_avx2() {
#if defined(BD_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* avx2_table() {
#if defined(BD_HAVE_AVX2_KERNELS)
  if (cpu_supports_avx2()) return &avx2::table();
#endif
  return nullptr;
}

namespace {

struct Selection {
  const KernelTable* table;
  Isa isa;
};

Selection initial_selection() {
  const char* force = std::getenv("BD_FORCE_SCALAR");
  const bool forced = force != nullptr && *force != '\0' && *force != '0';
  if (!forced) {
    if (const KernelTable* t = avx2_table()) return {t, Isa::avx2};
  }
  return {&scalar_table(), Isa::scalar};
}

Selection& selection() {
  static Selection s = initial_selection();
  return s;
}

}  // namespace

const KernelTable& active() { return *selection().table; }

Isa active_isa() { return selection().isa; }

bool select_isa(Isa isa) {
  if (isa == Isa::scalar) {
    selection() = {&scalar_table(), Isa::scalar};
    return true;
  }
  const KernelTable* t = avx2_table();
  if (t == nullptr) return false;
  selection() = {t, Isa::avx2};
  return true;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "unknown";
}

}  // namespace bd::kernels

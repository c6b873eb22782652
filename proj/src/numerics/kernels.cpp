#include "ddsd/numerics/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string_view>

namespace ddsd::num::kernels {

#if defined(DDSD_HAVE_AVX2)
const KernelTable* avx2_table_unchecked() noexcept;
#endif

namespace {

bool cpu_has_avx2_fma() noexcept {
#if defined(DDSD_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() noexcept {
  const KernelTable* best = avx2_table();
  if (const char* env = std::getenv("DDSD_KERNELS")) {
    const std::string_view want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && best) return best;
  }
  return best ? best : &scalar_table();
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable* avx2_table() noexcept {
#if defined(DDSD_HAVE_AVX2)
  static const bool ok = cpu_has_avx2_fma();
  return ok ? avx2_table_unchecked() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_relaxed); }

Backend active_backend() noexcept { return active().backend; }

std::string_view backend_name(Backend b) noexcept {
  switch (b) {
    case Backend::Scalar:
      return "scalar";
    case Backend::Avx2:
      return "avx2";
  }
  return "unknown";
}

bool select_backend(Backend b) noexcept {
  const KernelTable* table = nullptr;
  switch (b) {
    case Backend::Scalar:
      table = &scalar_table();
      break;
    case Backend::Avx2:
      table = avx2_table();
      break;
  }
  if (!table) return false;
  current().store(table, std::memory_order_relaxed);
  return true;
}

}  // namespace ddsd::num::kernels

#include "maskedit/simd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string_view>

namespace maskedit::simd {

#if defined(MASKEDIT_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

bool cpu_has_avx2() {
#if defined(MASKEDIT_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return supported;
#else
  return false;
#endif
}

const KernelTable* avx2_kernels() {
#if defined(MASKEDIT_HAVE_AVX2)
  if (cpu_has_avx2()) return &avx2_table();
#endif
  return nullptr;
}

namespace {

const KernelTable* select_default() {
  const char* env = std::getenv("MASKEDIT_SIMD");
  const std::string_view choice = env ? env : "auto";
  if (choice == "scalar") return &scalar_kernels();
  if (const KernelTable* avx2 = avx2_kernels()) return avx2;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{select_default()};
  return slot;
}

}  // namespace

const KernelTable& kernels() { return *active_slot().load(std::memory_order_relaxed); }

void set_active(const KernelTable& table) { active_slot().store(&table, std::memory_order_relaxed); }

}  // namespace maskedit::simd

#pragma once

// Data-parallel inner loops used by the tensor core.
//
// Every kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2 variant.  The active table is chosen once per process from the CPU
// feature set; MASKEDIT_SIMD=scalar|avx2 overrides the choice.  Both variants
// are equivalence-tested against each other in tests/unit/test_kernels.cpp.

#include <cstddef>
#include <string_view>

namespace maskedit::simd {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  Isa isa;
  const char* name;

  // C[i, j] += sum_p A(i, p) * B[p, j]
  // A(i, p) = a[i * a_row + p * a_col]; B and C rows are contiguous.
  void (*gemm)(int m, int n, int k, const double* a, std::ptrdiff_t a_row, std::ptrdiff_t a_col,
               const double* b, std::ptrdiff_t ldb, double* c, std::ptrdiff_t ldc);

  // C[i, j] += sum_p A[i, p] * B[j, p]
  void (*gemm_abt)(int m, int n, int k, const double* a, std::ptrdiff_t lda, const double* b,
                   std::ptrdiff_t ldb, double* c, std::ptrdiff_t ldc);

  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);

  double (*dot)(std::size_t n, const double* x, const double* y);

  // out[p] += w[p] * x[p]
  void (*mul_acc)(std::size_t n, const double* w, const double* x, double* out);

  // One row of an affine warp field.  For column j the source point is
  // (xs[j], y); writes out[2j] = (l00*x + l01*y) + t0 and
  // out[2j+1] = (l10*x + l11*y) + t1.  Evaluated without fused
  // multiply-add so every variant is bit-identical to the scalar reference.
  void (*affine_row)(std::size_t width, const double* xs, double y, const double* linear,
                     const double* translation, double* out);
};

const KernelTable& scalar_kernels();

// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2_kernels();

// Process-wide active table.
const KernelTable& kernels();

// Force a specific table (tests and benchmarks). Not thread-safe with
// concurrent kernel use.
void set_active(const KernelTable& table);

bool cpu_has_avx2();

}  // namespace maskedit::simd

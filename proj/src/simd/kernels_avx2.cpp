// Compiled with -mavx2 -mfma -ffp-contract=off; only entered after a runtime
// CPU check.

#include "maskedit/simd/kernels.hpp"

#include <immintrin.h>

namespace maskedit::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void gemm_avx2(int m, int n, int k, const double* a, std::ptrdiff_t a_row, std::ptrdiff_t a_col,
               const double* b, std::ptrdiff_t ldb, double* c, std::ptrdiff_t ldc) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + (i + 0) * a_row;
    const double* a1 = a + (i + 1) * a_row;
    const double* a2 = a + (i + 2) * a_row;
    const double* a3 = a + (i + 3) * a_row;
    double* c0 = c + (i + 0) * ldc;
    double* c1 = c + (i + 1) * ldc;
    double* c2 = c + (i + 2) * ldc;
    double* c3 = c + (i + 3) * ldc;
    int j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d r00 = _mm256_loadu_pd(c0 + j), r01 = _mm256_loadu_pd(c0 + j + 4);
      __m256d r10 = _mm256_loadu_pd(c1 + j), r11 = _mm256_loadu_pd(c1 + j + 4);
      __m256d r20 = _mm256_loadu_pd(c2 + j), r21 = _mm256_loadu_pd(c2 + j + 4);
      __m256d r30 = _mm256_loadu_pd(c3 + j), r31 = _mm256_loadu_pd(c3 + j + 4);
      for (int p = 0; p < k; ++p) {
        const double* brow = b + p * ldb + j;
        const __m256d b0 = _mm256_loadu_pd(brow);
        const __m256d b1 = _mm256_loadu_pd(brow + 4);
        const std::ptrdiff_t off = p * a_col;
        __m256d av = _mm256_broadcast_sd(a0 + off);
        r00 = _mm256_fmadd_pd(av, b0, r00);
        r01 = _mm256_fmadd_pd(av, b1, r01);
        av = _mm256_broadcast_sd(a1 + off);
        r10 = _mm256_fmadd_pd(av, b0, r10);
        r11 = _mm256_fmadd_pd(av, b1, r11);
        av = _mm256_broadcast_sd(a2 + off);
        r20 = _mm256_fmadd_pd(av, b0, r20);
        r21 = _mm256_fmadd_pd(av, b1, r21);
        av = _mm256_broadcast_sd(a3 + off);
        r30 = _mm256_fmadd_pd(av, b0, r30);
        r31 = _mm256_fmadd_pd(av, b1, r31);
      }
      _mm256_storeu_pd(c0 + j, r00), _mm256_storeu_pd(c0 + j + 4, r01);
      _mm256_storeu_pd(c1 + j, r10), _mm256_storeu_pd(c1 + j + 4, r11);
      _mm256_storeu_pd(c2 + j, r20), _mm256_storeu_pd(c2 + j + 4, r21);
      _mm256_storeu_pd(c3 + j, r30), _mm256_storeu_pd(c3 + j + 4, r31);
    }
    for (; j < n; ++j) {
      double s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
      for (int p = 0; p < k; ++p) {
        const double bv = b[p * ldb + j];
        const std::ptrdiff_t off = p * a_col;
        s0 += a0[off] * bv;
        s1 += a1[off] * bv;
        s2 += a2[off] * bv;
        s3 += a3[off] * bv;
      }
      c0[j] = s0, c1[j] = s1, c2[j] = s2, c3[j] = s3;
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * a_row;
    double* ci = c + i * ldc;
    int j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d r0 = _mm256_loadu_pd(ci + j), r1 = _mm256_loadu_pd(ci + j + 4);
      for (int p = 0; p < k; ++p) {
        const __m256d av = _mm256_broadcast_sd(ai + p * a_col);
        r0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb + j), r0);
        r1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb + j + 4), r1);
      }
      _mm256_storeu_pd(ci + j, r0), _mm256_storeu_pd(ci + j + 4, r1);
    }
    for (; j < n; ++j) {
      double s = ci[j];
      for (int p = 0; p < k; ++p) s += ai[p * a_col] * b[p * ldb + j];
      ci[j] = s;
    }
  }
}

double dot_avx2(std::size_t n, const double* x, const double* y) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void gemm_abt_avx2(int m, int n, int k, const double* a, std::ptrdiff_t lda, const double* b,
                   std::ptrdiff_t ldb, double* c, std::ptrdiff_t ldc) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + (j + 0) * ldb;
      const double* b1 = b + (j + 1) * ldb;
      const double* b2 = b + (j + 2) * ldb;
      const double* b3 = b + (j + 3) * ldb;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      int p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d av = _mm256_loadu_pd(arow + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      double t0 = hsum(s0), t1 = hsum(s1), t2 = hsum(s2), t3 = hsum(s3);
      for (; p < k; ++p) {
        const double av = arow[p];
        t0 += av * b0[p];
        t1 += av * b1[p];
        t2 += av * b2[p];
        t3 += av * b3[p];
      }
      double* crow = c + i * ldc + j;
      crow[0] += t0, crow[1] += t1, crow[2] += t2, crow[3] += t3;
    }
    for (; j < n; ++j) c[i * ldc + j] += dot_avx2(static_cast<std::size_t>(k), arow, b + j * ldb);
  }
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void mul_acc_avx2(std::size_t n, const double* w, const double* x, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r =
        _mm256_fmadd_pd(_mm256_loadu_pd(w + i), _mm256_loadu_pd(x + i), _mm256_loadu_pd(out + i));
    _mm256_storeu_pd(out + i, r);
  }
  for (; i < n; ++i) out[i] += w[i] * x[i];
}

void affine_row_avx2(std::size_t width, const double* xs, double y, const double* linear,
                     const double* translation, double* out) {
  const double l00 = linear[0], l01 = linear[1], l10 = linear[2], l11 = linear[3];
  const double cy0 = l01 * y, cy1 = l11 * y;
  // Lanes hold interleaved (x', y') pairs for two columns: [l00 l10 l00 l10].
  const __m256d lx = _mm256_setr_pd(l00, l10, l00, l10);
  const __m256d cy = _mm256_setr_pd(cy0, cy1, cy0, cy1);
  const __m256d tr = _mm256_setr_pd(translation[0], translation[1], translation[0], translation[1]);
  std::size_t j = 0;
  for (; j + 2 <= width; j += 2) {
    const __m256d xv = _mm256_setr_pd(xs[j], xs[j], xs[j + 1], xs[j + 1]);
    const __m256d r = _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(lx, xv), cy), tr);
    _mm256_storeu_pd(out + 2 * j, r);
  }
  for (; j < width; ++j) {
    const double x = xs[j];
    out[2 * j] = (l00 * x + cy0) + translation[0];
    out[2 * j + 1] = (l10 * x + cy1) + translation[1];
  }
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{Isa::Avx2,    "avx2",   gemm_avx2,   gemm_abt_avx2,
                                 axpy_avx2,    dot_avx2, mul_acc_avx2, affine_row_avx2};
  return table;
}

}  // namespace maskedit::simd

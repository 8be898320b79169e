#include "maskedit/simd/kernels.hpp"

namespace maskedit::simd {
namespace {

void gemm_scalar(int m, int n, int k, const double* a, std::ptrdiff_t a_row, std::ptrdiff_t a_col,
                 const double* b, std::ptrdiff_t ldb, double* c, std::ptrdiff_t ldc) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (int p = 0; p < k; ++p) {
      const double av = a[i * a_row + p * a_col];
      const double* brow = b + p * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_abt_scalar(int m, int n, int k, const double* a, std::ptrdiff_t lda, const double* b,
                     std::ptrdiff_t ldb, double* c, std::ptrdiff_t ldc) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + j * ldb;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * ldc + j] += acc;
    }
  }
}

void axpy_scalar(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double dot_scalar(std::size_t n, const double* x, const double* y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void mul_acc_scalar(std::size_t n, const double* w, const double* x, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] += w[i] * x[i];
}

void affine_row_scalar(std::size_t width, const double* xs, double y, const double* linear,
                       const double* translation, double* out) {
  const double l00 = linear[0], l01 = linear[1], l10 = linear[2], l11 = linear[3];
  const double cy0 = l01 * y, cy1 = l11 * y;
  for (std::size_t j = 0; j < width; ++j) {
    const double x = xs[j];
    out[2 * j] = (l00 * x + cy0) + translation[0];
    out[2 * j + 1] = (l10 * x + cy1) + translation[1];
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::Scalar,    "scalar",    gemm_scalar,
                                 gemm_abt_scalar, axpy_scalar, dot_scalar,
                                 mul_acc_scalar,  affine_row_scalar};
  return table;
}

}  // namespace maskedit::simd

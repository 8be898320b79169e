#include <cmath>
#include <vector>

#include "doctest.h"
#include "maskedit/simd/kernels.hpp"
#include "support/gradcheck.hpp"

using namespace maskedit;
using maskedit::testing::uniform_values;

namespace {

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  return worst;
}

}  // namespace

TEST_CASE("scalar and AVX2 kernels agree") {
  const simd::KernelTable* fast = simd::avx2_kernels();
  if (!fast) {
    MESSAGE("AVX2 variant unavailable on this host; equivalence not exercised");
    return;
  }
  const simd::KernelTable& ref = simd::scalar_kernels();

  // Odd sizes cover the vector tails.
  for (auto [m, n, k] : {std::tuple{1, 1, 1}, {3, 7, 5}, {4, 8, 9}, {13, 29, 17}, {32, 64, 27}}) {
    const auto a = uniform_values(static_cast<std::size_t>(m) * k, -1, 1, 1 + m);
    const auto b = uniform_values(static_cast<std::size_t>(k) * n, -1, 1, 2 + n);
    auto c0 = uniform_values(static_cast<std::size_t>(m) * n, -1, 1, 3 + k);
    auto c1 = c0;
    ref.gemm(m, n, k, a.data(), k, 1, b.data(), n, c0.data(), n);
    fast->gemm(m, n, k, a.data(), k, 1, b.data(), n, c1.data(), n);
    CHECK(max_rel_diff(c0, c1) < 1e-12);

    // Transposed A access.
    auto d0 = std::vector<double>(static_cast<std::size_t>(m) * n, 0.0);
    auto d1 = d0;
    ref.gemm(m, n, k, a.data(), 1, m, b.data(), n, d0.data(), n);
    fast->gemm(m, n, k, a.data(), 1, m, b.data(), n, d1.data(), n);
    CHECK(max_rel_diff(d0, d1) < 1e-12);

    const auto bt = uniform_values(static_cast<std::size_t>(n) * k, -1, 1, 4 + n);
    auto e0 = std::vector<double>(static_cast<std::size_t>(m) * n, 0.5);
    auto e1 = e0;
    ref.gemm_abt(m, n, k, a.data(), k, bt.data(), k, e0.data(), n);
    fast->gemm_abt(m, n, k, a.data(), k, bt.data(), k, e1.data(), n);
    CHECK(max_rel_diff(e0, e1) < 1e-12);
  }

  for (std::size_t n : {0u, 1u, 3u, 4u, 15u, 64u, 1001u}) {
    const auto x = uniform_values(n, -2, 2, n + 10);
    const auto w = uniform_values(n, -2, 2, n + 11);
    auto y0 = uniform_values(n, -2, 2, n + 12);
    auto y1 = y0;
    ref.axpy(n, 0.37, x.data(), y0.data());
    fast->axpy(n, 0.37, x.data(), y1.data());
    CHECK(max_rel_diff(y0, y1) < 1e-14);

    const double d0 = ref.dot(n, x.data(), w.data());
    const double d1 = fast->dot(n, x.data(), w.data());
    CHECK(std::abs(d0 - d1) <= 1e-12 * std::max(1.0, std::abs(d0)));

    ref.mul_acc(n, w.data(), x.data(), y0.data());
    fast->mul_acc(n, w.data(), x.data(), y1.data());
    CHECK(max_rel_diff(y0, y1) < 1e-14);
  }
}

TEST_CASE("affine row kernel is bit-identical across variants") {
  const simd::KernelTable* fast = simd::avx2_kernels();
  if (!fast) return;
  const double linear[4] = {0.93, -0.21, 0.17, 1.08};
  const double translation[2] = {0.05, -0.33};
  for (std::size_t width : {1u, 2u, 5u, 64u, 257u}) {
    const auto xs = uniform_values(width, -1, 1, width);
    std::vector<double> o0(2 * width), o1(2 * width);
    simd::scalar_kernels().affine_row(width, xs.data(), 0.4, linear, translation, o0.data());
    fast->affine_row(width, xs.data(), 0.4, linear, translation, o1.data());
    CHECK(o0 == o1);
  }
}

TEST_CASE("active kernel table can be switched") {
  const simd::KernelTable& before = simd::kernels();
  simd::set_active(simd::scalar_kernels());
  CHECK(simd::kernels().isa == simd::Isa::Scalar);
  simd::set_active(before);
  CHECK(&simd::kernels() == &before);
}

#include <algorithm>
#include <cmath>
#include <limits>

#include "maskedit/detail/bilinear.hpp"
#include "maskedit/errors.hpp"
#include "maskedit/ops.hpp"
#include "maskedit/simd/kernels.hpp"

namespace maskedit::ops {
namespace {

using detail::grad_target;
using detail::make_result;
using detail::Node;

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
}

// col[(c*k + ky)*k + kx][y*W + x] = x[c][y + ky - pad][x + kx - pad]
void im2col(const double* x, int channels, int h, int w, int k, int pad, double* col) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          double* row = dst + static_cast<std::size_t>(y) * w;
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h || x_lo >= x_hi) {
            std::fill_n(row, w, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * h + sy) * w;
          std::fill_n(row, x_lo, 0.0);
          std::copy(src + x_lo + dx, src + x_hi + dx, row + x_lo);
          std::fill(row + x_hi, row + w, 0.0);
        }
      }
}

void col2im(const double* col, int channels, int h, int w, int k, int pad, double* x) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* src = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h || x_lo >= x_hi) continue;
          double* dst = x + (static_cast<std::size_t>(c) * h + sy) * w;
          const double* row = src + static_cast<std::size_t>(y) * w;
          for (int xx = x_lo; xx < x_hi; ++xx) dst[xx + dx] += row[xx];
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k)
    throw ShapeError("conv2d weight " + to_string(weight.shape()) + " does not fit input " +
                     to_string(x.shape()));
  if (2 * pad != k - 1) throw ShapeError("conv2d supports same-size padding only");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
    throw ShapeError("conv2d bias shape mismatch");

  const int patch = cin * k * k;
  const int hw = h * w;
  const bool pointwise = k == 1;
  const auto& kern = simd::kernels();
  const auto xv = x.values();
  const auto wv = weight.values();
  std::vector<double> out(static_cast<std::size_t>(n) * cout * hw, 0.0);
  std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(patch) * hw);
  for (int b = 0; b < n; ++b) {
    const double* xb = xv.data() + static_cast<std::size_t>(b) * cin * hw;
    double* ob = out.data() + static_cast<std::size_t>(b) * cout * hw;
    if (bias.defined()) {
      const auto bv = bias.values();
      for (int o = 0; o < cout; ++o) std::fill_n(ob + static_cast<std::size_t>(o) * hw, hw, bv[static_cast<std::size_t>(o)]);
    }
    const double* src = xb;
    if (!pointwise) {
      im2col(xb, cin, h, w, k, pad, col.data());
      src = col.data();
    }
    kern.gemm(cout, hw, patch, wv.data(), patch, 1, src, hw, ob, hw);
  }
  return make_result({n, cout, h, w}, std::move(out), {x, weight, bias},
                     [=](Node& self) {
                       const auto& kn = simd::kernels();
                       const auto& X = self.inputs[0]->value;
                       const auto& W = self.inputs[1]->value;
                       double* gx = grad_target(self, 0);
                       double* gw = grad_target(self, 1);
                       double* gb = self.inputs[2] ? grad_target(self, 2) : nullptr;
                       std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(patch) * hw);
                       std::vector<double> dcol(pointwise || !gx ? 0 : static_cast<std::size_t>(patch) * hw);
                       for (int b = 0; b < n; ++b) {
                         const double* g = self.grad.data() + static_cast<std::size_t>(b) * cout * hw;
                         const double* xb = X.data() + static_cast<std::size_t>(b) * cin * hw;
                         if (gb)
                           for (int o = 0; o < cout; ++o) {
                             const double* go = g + static_cast<std::size_t>(o) * hw;
                             double acc = 0.0;
                             for (int p = 0; p < hw; ++p) acc += go[p];
                             gb[o] += acc;
                           }
                         if (gw) {
                           const double* src = xb;
                           if (!pointwise) {
                             im2col(xb, cin, h, w, k, pad, col.data());
                             src = col.data();
                           }
                           kn.gemm_abt(cout, patch, hw, g, hw, src, hw, gw, patch);
                         }
                         if (gx) {
                           double* gxb = gx + static_cast<std::size_t>(b) * cin * hw;
                           if (pointwise) {
                             kn.gemm(cin, hw, cout, W.data(), 1, patch, g, hw, gxb, hw);
                           } else {
                             std::fill(dcol.begin(), dcol.end(), 0.0);
                             kn.gemm(patch, hw, cout, W.data(), 1, patch, g, hw, dcol.data(), hw);
                             col2im(dcol.data(), cin, h, w, k, pad, gxb);
                           }
                         }
                       }
                     });
}

Tensor avg_pool2d(const Tensor& x, int factor) {
  require_rank(x, 4, "avg_pool2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (factor < 1 || h % factor || w % factor)
    throw DimensionError("avg_pool2d factor " + std::to_string(factor) + " does not divide " +
                         to_string(x.shape()));
  const int ho = h / factor, wo = w / factor;
  const double scale = 1.0 / (factor * factor);
  const auto xv = x.values();
  std::vector<double> out(static_cast<std::size_t>(n) * c * ho * wo, 0.0);
  for (std::size_t p = 0; p < static_cast<std::size_t>(n) * c; ++p)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        out[(p * ho + y / factor) * wo + xx / factor] += xv[(p * h + y) * w + xx] * scale;
  return make_result({n, c, ho, wo}, std::move(out), {x}, [=](Node& self) {
    double* gx = grad_target(self, 0);
    if (!gx) return;
    for (std::size_t p = 0; p < static_cast<std::size_t>(n) * c; ++p)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          gx[(p * h + y) * w + xx] += self.grad[(p * ho + y / factor) * wo + xx / factor] * scale;
  });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  require_rank(x, 4, "upsample_nearest");
  if (factor < 1) throw DimensionError("upsample factor must be positive");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h * factor, wo = w * factor;
  const auto xv = x.values();
  std::vector<double> out(static_cast<std::size_t>(n) * c * ho * wo);
  for (std::size_t p = 0; p < static_cast<std::size_t>(n) * c; ++p)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx)
        out[(p * ho + y) * wo + xx] = xv[(p * h + y / factor) * w + xx / factor];
  return make_result({n, c, ho, wo}, std::move(out), {x}, [=](Node& self) {
    double* gx = grad_target(self, 0);
    if (!gx) return;
    for (std::size_t p = 0; p < static_cast<std::size_t>(n) * c; ++p)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx)
          gx[(p * h + y / factor) * w + xx / factor] += self.grad[(p * ho + y) * wo + xx];
  });
}

Tensor min_pool2d(const Tensor& x, int radius, double outside) {
  require_rank(x, 4, "min_pool2d");
  if (radius < 0) throw DimensionError("min_pool2d radius must be non-negative");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto xv = x.values();
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  std::vector<double> out(xv.size());
  constexpr std::size_t kOutside = std::numeric_limits<std::size_t>::max();
  auto arg = std::make_shared<std::vector<std::size_t>>(xv.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_idx = kOutside;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx) {
            const int sy = y + dy, sx = xx + dx;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
              if (outside < best) best = outside, best_idx = kOutside;
              continue;
            }
            const std::size_t idx = (p * h + sy) * w + sx;
            if (xv[idx] < best) best = xv[idx], best_idx = idx;
          }
        const std::size_t o = (p * h + y) * w + xx;
        out[o] = best;
        (*arg)[o] = best_idx;
      }
  return make_result(x.shape(), std::move(out), {x}, [arg](Node& self) {
    double* gx = grad_target(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < arg->size(); ++i)
      if ((*arg)[i] != std::numeric_limits<std::size_t>::max()) gx[(*arg)[i]] += self.grad[i];
  });
}

Tensor grid_sample(const Tensor& image, const Tensor& grid, Padding padding) {
  require_rank(image, 4, "grid_sample image");
  require_rank(grid, 4, "grid_sample grid");
  const int n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  if (grid.dim(0) != n || grid.dim(3) != 2)
    throw ShapeError("grid " + to_string(grid.shape()) + " does not match image " +
                     to_string(image.shape()));
  if (h < 1 || w < 1) throw DimensionError("grid_sample on an empty image");
  const int ho = grid.dim(1), wo = grid.dim(2);
  const std::size_t out_hw = static_cast<std::size_t>(ho) * wo;
  const std::size_t in_hw = static_cast<std::size_t>(h) * w;
  const auto iv = image.values();
  const auto gv = grid.values();
  std::vector<double> out(static_cast<std::size_t>(n) * c * out_hw);
  for (int b = 0; b < n; ++b)
    for (std::size_t p = 0; p < out_hw; ++p) {
      const double* g = gv.data() + (static_cast<std::size_t>(b) * out_hw + p) * 2;
      const detail::Tap tap = detail::make_tap(g[0], g[1], w, h, padding);
      for (int ch = 0; ch < c; ++ch) {
        const double* plane = iv.data() + (static_cast<std::size_t>(b) * c + ch) * in_hw;
        out[(static_cast<std::size_t>(b) * c + ch) * out_hw + p] =
            detail::interpolate(detail::gather(plane, tap, w, h, padding), tap);
      }
    }
  return make_result({n, c, ho, wo}, std::move(out), {image, grid}, [=](Node& self) {
    const auto& I = self.inputs[0]->value;
    const auto& G = self.inputs[1]->value;
    double* gi = grad_target(self, 0);
    double* gg = grad_target(self, 1);
    for (int b = 0; b < n; ++b)
      for (std::size_t p = 0; p < out_hw; ++p) {
        const double* g = G.data() + (static_cast<std::size_t>(b) * out_hw + p) * 2;
        const detail::Tap tap = detail::make_tap(g[0], g[1], w, h, padding);
        double dgx = 0.0, dgy = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t plane_off = (static_cast<std::size_t>(b) * c + ch) * in_hw;
          const double up = self.grad[(static_cast<std::size_t>(b) * c + ch) * out_hw + p];
          if (up == 0.0) continue;
          if (gi) detail::scatter(gi + plane_off, tap, w, h, up);
          if (gg) {
            const detail::Corners v = detail::gather(I.data() + plane_off, tap, w, h, padding);
            const double d_fx = (1.0 - tap.fy) * (v.v01 - v.v00) + tap.fy * (v.v11 - v.v10);
            const double top = v.v00 + tap.fx * (v.v01 - v.v00);
            const double bottom = v.v10 + tap.fx * (v.v11 - v.v10);
            dgx += up * d_fx;
            dgy += up * (bottom - top);
          }
        }
        if (gg) {
          double* t = gg + (static_cast<std::size_t>(b) * out_hw + p) * 2;
          t[0] += dgx * tap.dx_dg;
          t[1] += dgy * tap.dy_dg;
        }
      }
  });
}

Tensor affine_grid(const Tensor& theta, int height, int width) {
  require_rank(theta, 3, "affine_grid");
  if (theta.dim(1) != 2 || theta.dim(2) != 3) throw ShapeError("affine_grid expects theta [N,2,3]");
  if (height < 1 || width < 1) throw DimensionError("affine_grid needs positive dimensions");
  const int n = theta.dim(0);
  std::vector<double> xs(static_cast<std::size_t>(width)), ys(static_cast<std::size_t>(height));
  for (int j = 0; j < width; ++j) xs[static_cast<std::size_t>(j)] = width == 1 ? 0.0 : -1.0 + 2.0 * j / (width - 1);
  for (int i = 0; i < height; ++i) ys[static_cast<std::size_t>(i)] = height == 1 ? 0.0 : -1.0 + 2.0 * i / (height - 1);
  const auto tv = theta.values();
  const std::size_t plane = static_cast<std::size_t>(height) * width * 2;
  std::vector<double> out(static_cast<std::size_t>(n) * plane);
  const auto& kern = simd::kernels();
  for (int b = 0; b < n; ++b) {
    const double* t = tv.data() + static_cast<std::size_t>(b) * 6;
    const double linear[4] = {t[0], t[1], t[3], t[4]};
    const double translation[2] = {t[2], t[5]};
    for (int i = 0; i < height; ++i)
      kern.affine_row(static_cast<std::size_t>(width), xs.data(), ys[static_cast<std::size_t>(i)], linear,
                      translation, out.data() + b * plane + static_cast<std::size_t>(i) * width * 2);
  }
  return make_result({n, height, width, 2}, std::move(out), {theta},
                     [=](Node& self) {
                       double* gt = grad_target(self, 0);
                       if (!gt) return;
                       for (int b = 0; b < n; ++b) {
                         double acc[6] = {0, 0, 0, 0, 0, 0};
                         const double* g = self.grad.data() + b * plane;
                         for (int i = 0; i < height; ++i)
                           for (int j = 0; j < width; ++j) {
                             const double gx = g[(static_cast<std::size_t>(i) * width + j) * 2];
                             const double gy = g[(static_cast<std::size_t>(i) * width + j) * 2 + 1];
                             const double x = xs[static_cast<std::size_t>(j)], y = ys[static_cast<std::size_t>(i)];
                             acc[0] += gx * x, acc[1] += gx * y, acc[2] += gx;
                             acc[3] += gy * x, acc[4] += gy * y, acc[5] += gy;
                           }
                         for (int q = 0; q < 6; ++q) gt[b * 6 + q] += acc[q];
                       }
                     });
}

Tensor inverse2x2(const Tensor& m) {
  if (m.rank() < 2 || m.dim(-1) != 2 || m.dim(-2) != 2)
    throw ShapeError("inverse2x2 expects [..., 2, 2], got " + to_string(m.shape()));
  const auto mv = m.values();
  const std::size_t count = mv.size() / 4;
  std::vector<double> out(mv.size());
  for (std::size_t i = 0; i < count; ++i) {
    const double* a = mv.data() + 4 * i;
    const double det = a[0] * a[3] - a[1] * a[2];
    if (!(std::abs(det) > 1e-8))
      throw SingularityError("singular 2x2 matrix (det = " + std::to_string(det) + ")", det);
    double* r = out.data() + 4 * i;
    r[0] = a[3] / det, r[1] = -a[1] / det, r[2] = -a[2] / det, r[3] = a[0] / det;
  }
  return make_result(m.shape(), std::move(out), {m}, [count](Node& self) {
    double* gm = grad_target(self, 0);
    if (!gm) return;
    // dA = -inv^T G inv^T
    for (std::size_t i = 0; i < count; ++i) {
      const double* v = self.value.data() + 4 * i;
      const double* g = self.grad.data() + 4 * i;
      // t = G inv^T
      const double t00 = g[0] * v[0] + g[1] * v[1], t01 = g[0] * v[2] + g[1] * v[3];
      const double t10 = g[2] * v[0] + g[3] * v[1], t11 = g[2] * v[2] + g[3] * v[3];
      double* d = gm + 4 * i;
      d[0] -= v[0] * t00 + v[2] * t10;
      d[1] -= v[0] * t01 + v[2] * t11;
      d[2] -= v[1] * t00 + v[3] * t10;
      d[3] -= v[1] * t01 + v[3] * t11;
    }
  });
}

Tensor convex_fusion(const Tensor& weights, const Tensor& candidates) {
  require_rank(weights, 4, "convex_fusion weights");
  require_rank(candidates, 5, "convex_fusion candidates");
  const int n = weights.dim(0), m = weights.dim(1), h = weights.dim(2), w = weights.dim(3);
  const int c = candidates.dim(2);
  if (candidates.dim(0) != n || candidates.dim(1) != m || candidates.dim(3) != h || candidates.dim(4) != w)
    throw ShapeError("convex_fusion: " + std::to_string(m) + " weight maps for candidates " +
                     to_string(candidates.shape()));
  if (m < 1) throw ShapeError("convex_fusion needs at least one candidate");
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const auto wv = weights.values();
  const auto cv = candidates.values();
  const auto& kern = simd::kernels();
  std::vector<double> out(static_cast<std::size_t>(n) * c * hw);
  std::vector<double> diff(hw);
  auto cand = [&](const auto& data, int b, int i, int ch) {
    return data.data() + ((static_cast<std::size_t>(b) * m + i) * c + ch) * hw;
  };
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      double* o = out.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
      const double* base = cand(cv, b, 0, ch);
      std::copy_n(base, hw, o);
      for (int i = 1; i < m; ++i) {
        const double* ci = cand(cv, b, i, ch);
        for (std::size_t p = 0; p < hw; ++p) diff[p] = ci[p] - base[p];
        kern.mul_acc(hw, wv.data() + (static_cast<std::size_t>(b) * m + i) * hw, diff.data(), o);
      }
    }
  return make_result({n, c, h, w}, std::move(out), {weights, candidates}, [=](Node& self) {
    const auto& kn = simd::kernels();
    const auto& W = self.inputs[0]->value;
    const auto& C = self.inputs[1]->value;
    double* gw = grad_target(self, 0);
    double* gc = grad_target(self, 1);
    std::vector<double> diff(hw), rest(hw);
    auto at = [&](auto* data, int b, int i, int ch) {
      return data + ((static_cast<std::size_t>(b) * m + i) * c + ch) * hw;
    };
    for (int b = 0; b < n; ++b) {
      // 1 - sum_{i>0} w_i, the effective weight of candidate 0.
      std::fill(rest.begin(), rest.end(), 1.0);
      for (int i = 1; i < m; ++i) {
        const double* wi = W.data() + (static_cast<std::size_t>(b) * m + i) * hw;
        for (std::size_t p = 0; p < hw; ++p) rest[p] -= wi[p];
      }
      for (int ch = 0; ch < c; ++ch) {
        const double* g = self.grad.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
        const double* base = at(C.data(), b, 0, ch);
        if (gc) kn.mul_acc(hw, rest.data(), g, at(gc, b, 0, ch));
        for (int i = 1; i < m; ++i) {
          const double* wi = W.data() + (static_cast<std::size_t>(b) * m + i) * hw;
          if (gc) kn.mul_acc(hw, wi, g, at(gc, b, i, ch));
          if (gw) {
            const double* ci = at(C.data(), b, i, ch);
            for (std::size_t p = 0; p < hw; ++p) diff[p] = ci[p] - base[p];
            kn.mul_acc(hw, g, diff.data(), gw + (static_cast<std::size_t>(b) * m + i) * hw);
          }
        }
      }
    }
  });
}

Tensor resize_bilinear(const Tensor& x, int height, int width) {
  require_rank(x, 4, "resize_bilinear");
  if (x.dim(2) == height && x.dim(3) == width) return x;
  const int n = x.dim(0);
  Tensor theta = Tensor::zeros({n, 2, 3});
  auto tv = theta.mutable_values();
  for (int b = 0; b < n; ++b) tv[static_cast<std::size_t>(b) * 6] = tv[static_cast<std::size_t>(b) * 6 + 4] = 1.0;
  return grid_sample(x, affine_grid(theta, height, width), Padding::Border);
}

}  // namespace maskedit::ops

#include "maskedit/geometry.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "maskedit/detail/bilinear.hpp"
#include "maskedit/errors.hpp"
#include "maskedit/simd/kernels.hpp"

namespace maskedit::geometry {

Vec2 Affine2D::apply(Vec2 z) const {
  return {(linear[0] * z.x + linear[1] * z.y) + translation[0],
          (linear[2] * z.x + linear[3] * z.y) + translation[1]};
}

Affine2D compose_affine(const Affine2D& a, const Affine2D& b) {
  const Mat2& p = a.linear;
  const Mat2& q = b.linear;
  Affine2D r;
  r.linear = {p[0] * q[0] + p[1] * q[2], p[0] * q[1] + p[1] * q[3],
              p[2] * q[0] + p[3] * q[2], p[2] * q[1] + p[3] * q[3]};
  r.translation = {p[0] * b.translation[0] + p[1] * b.translation[1] + a.translation[0],
                   p[2] * b.translation[0] + p[3] * b.translation[1] + a.translation[1]};
  return r;
}

Affine2D invert_affine(const Affine2D& a) {
  const double det = a.det();
  if (!(std::abs(det) > 1e-8))
    throw SingularityError("affine linear part is singular (det = " + std::to_string(det) + ")", det);
  Affine2D r;
  r.linear = {a.linear[3] / det, -a.linear[1] / det, -a.linear[2] / det, a.linear[0] / det};
  r.translation = {-(r.linear[0] * a.translation[0] + r.linear[1] * a.translation[1]),
                   -(r.linear[2] * a.translation[0] + r.linear[3] * a.translation[1])};
  return r;
}

double normalized_coordinate(int index, int extent) {
  return extent == 1 ? 0.0 : -1.0 + 2.0 * index / (extent - 1);
}

NormalizedGrid make_identity_grid(int height, int width) {
  if (height < 1 || width < 1)
    throw DimensionError("grid dimensions must be positive, got " + std::to_string(height) + "x" +
                         std::to_string(width));
  NormalizedGrid g{height, width, std::vector<double>(static_cast<std::size_t>(height) * width * 2)};
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) {
      const std::size_t k = (static_cast<std::size_t>(i) * width + j) * 2;
      g.coords[k] = normalized_coordinate(j, width);
      g.coords[k + 1] = normalized_coordinate(i, height);
    }
  return g;
}

Tensor WarpField::to_tensor() const { return Tensor::from({1, height, width, 2}, target); }

WarpField WarpField::from_tensor(const Tensor& grid, int batch_index) {
  if (grid.rank() != 4 || grid.dim(3) != 2) throw ShapeError("expected a [N,H,W,2] grid");
  WarpField f{grid.dim(1), grid.dim(2), {}};
  const std::size_t n = static_cast<std::size_t>(f.height) * f.width * 2;
  const auto v = grid.values();
  f.target.assign(v.begin() + static_cast<std::ptrdiff_t>(n * batch_index),
                  v.begin() + static_cast<std::ptrdiff_t>(n * (batch_index + 1)));
  return f;
}

WarpField WarpField::identity(int height, int width) {
  NormalizedGrid g = make_identity_grid(height, width);
  return {height, width, std::move(g.coords)};
}

WarpField affine_to_warpfield(const Affine2D& a, int height, int width) {
  if (height < 1 || width < 1) throw DimensionError("warp field dimensions must be positive");
  std::vector<double> xs(static_cast<std::size_t>(width));
  for (int j = 0; j < width; ++j) xs[static_cast<std::size_t>(j)] = normalized_coordinate(j, width);
  WarpField f{height, width, std::vector<double>(static_cast<std::size_t>(height) * width * 2)};
  const auto& kern = simd::kernels();
  for (int i = 0; i < height; ++i)
    kern.affine_row(static_cast<std::size_t>(width), xs.data(), normalized_coordinate(i, height),
                    a.linear.data(), a.translation.data(), f.target.data() + static_cast<std::size_t>(i) * width * 2);
  return f;
}

Image sample(const Image& image, const WarpField& warp, Padding padding) {
  if (image.empty()) throw ShapeError("cannot sample an empty image");
  if (warp.target.size() != static_cast<std::size_t>(warp.height) * warp.width * 2)
    throw ShapeError("warp field storage does not match its dimensions");
  Image out = Image::zeros(image.channels, warp.height, warp.width);
  for (int i = 0; i < warp.height; ++i)
    for (int j = 0; j < warp.width; ++j) {
      const Vec2 g = warp.at(i, j);
      const detail::Tap tap = detail::make_tap(g.x, g.y, image.width, image.height, padding);
      for (int c = 0; c < image.channels; ++c) {
        const double* plane = image.data.data() + c * image.plane_size();
        out.at(c, i, j) = detail::interpolate(detail::gather(plane, tap, image.width, image.height, padding), tap);
      }
    }
  return out;
}

TPSParams zero_tps(int grid_size) {
  if (grid_size < 2) throw DimensionError("TPS control grid must be at least 2x2");
  return {grid_size, std::vector<Vec2>(static_cast<std::size_t>(grid_size * grid_size)), Affine2D::identity()};
}

TPSParams random_tps(const TpsConfig& config, std::uint64_t seed) {
  TPSParams p = zero_tps(config.grid_size);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> disp(-config.sigma, config.sigma);
  std::uniform_real_distribution<double> jit(-config.affine_sigma, config.affine_sigma);
  for (auto& d : p.displacements) d = {disp(rng), disp(rng)};
  p.jitter.linear = {1.0 + jit(rng), jit(rng), jit(rng), 1.0 + jit(rng)};
  p.jitter.translation = {jit(rng), jit(rng)};
  return p;
}

namespace {

// U(r) = r^2 log r^2 and its derivatives w.r.t. (dx, dy), r^2 = dx^2 + dy^2.
constexpr double kTinyR2 = 1e-18;

double kernel_value(double dx, double dy) {
  const double r2 = dx * dx + dy * dy;
  return r2 < kTinyR2 ? 0.0 : r2 * std::log(r2);
}

}  // namespace

ThinPlateSpline::ThinPlateSpline(const TPSParams& params) : jitter_(params.jitter) {
  const int g = params.grid_size;
  if (g < 2) throw DimensionError("TPS control grid must be at least 2x2");
  const std::size_t n = static_cast<std::size_t>(g) * g;
  if (params.displacements.size() != n) throw ShapeError("TPS displacement count does not match grid");
  controls_.reserve(n);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) controls_.push_back({normalized_coordinate(j, g), normalized_coordinate(i, g)});

  const Eigen::Index m = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd system = Eigen::MatrixXd::Zero(m + 3, m + 3);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m + 3, 2);
  for (Eigen::Index a = 0; a < m; ++a) {
    const Vec2 ca = controls_[static_cast<std::size_t>(a)];
    for (Eigen::Index b = 0; b < m; ++b) {
      const Vec2 cb = controls_[static_cast<std::size_t>(b)];
      system(a, b) = kernel_value(ca.x - cb.x, ca.y - cb.y);
    }
    system(a, m) = system(m, a) = 1.0;
    system(a, m + 1) = system(m + 1, a) = ca.x;
    system(a, m + 2) = system(m + 2, a) = ca.y;
    rhs(a, 0) = params.displacements[static_cast<std::size_t>(a)].x;
    rhs(a, 1) = params.displacements[static_cast<std::size_t>(a)].y;
  }
  const Eigen::MatrixXd sol = system.partialPivLu().solve(rhs);
  weights_.resize(n);
  for (Eigen::Index a = 0; a < m; ++a) weights_[static_cast<std::size_t>(a)] = {sol(a, 0), sol(a, 1)};
  for (int q = 0; q < 3; ++q) affine_[static_cast<std::size_t>(q)] = {sol(m + q, 0), sol(m + q, 1)};
}

Vec2 ThinPlateSpline::apply(Vec2 z) const {
  double dx = affine_[0].x + affine_[1].x * z.x + affine_[2].x * z.y;
  double dy = affine_[0].y + affine_[1].y * z.x + affine_[2].y * z.y;
  for (std::size_t i = 0; i < controls_.size(); ++i) {
    const double u = kernel_value(z.x - controls_[i].x, z.y - controls_[i].y);
    dx += weights_[i].x * u;
    dy += weights_[i].y * u;
  }
  const Vec2 base = jitter_.apply(z);
  return {base.x + dx, base.y + dy};
}

Mat2 ThinPlateSpline::jacobian(Vec2 z) const {
  Mat2 j = jitter_.linear;
  j[0] += affine_[1].x, j[1] += affine_[2].x;
  j[2] += affine_[1].y, j[3] += affine_[2].y;
  for (std::size_t i = 0; i < controls_.size(); ++i) {
    const double ex = z.x - controls_[i].x, ey = z.y - controls_[i].y;
    const double r2 = ex * ex + ey * ey;
    if (r2 < kTinyR2) continue;
    const double s = 2.0 * (std::log(r2) + 1.0);  // dU/dex = ex * s
    j[0] += weights_[i].x * ex * s, j[1] += weights_[i].x * ey * s;
    j[2] += weights_[i].y * ex * s, j[3] += weights_[i].y * ey * s;
  }
  return j;
}

std::array<Mat2, 2> ThinPlateSpline::jacobian_derivatives(Vec2 z) const {
  std::array<Mat2, 2> d{};
  for (std::size_t i = 0; i < controls_.size(); ++i) {
    const double ex = z.x - controls_[i].x, ey = z.y - controls_[i].y;
    const double r2 = ex * ex + ey * ey;
    if (r2 < kTinyR2) continue;
    const double s = 2.0 * (std::log(r2) + 1.0);
    const double uxx = s + 4.0 * ex * ex / r2;
    const double uxy = 4.0 * ex * ey / r2;
    const double uyy = s + 4.0 * ey * ey / r2;
    const Vec2 w = weights_[i];
    // d/dx of [w.x Ux, w.x Uy; w.y Ux, w.y Uy]
    d[0][0] += w.x * uxx, d[0][1] += w.x * uxy, d[0][2] += w.y * uxx, d[0][3] += w.y * uxy;
    d[1][0] += w.x * uxy, d[1][1] += w.x * uyy, d[1][2] += w.y * uxy, d[1][3] += w.y * uyy;
  }
  return d;
}

WarpField apply_tps(const TPSParams& params, const NormalizedGrid& grid) {
  const ThinPlateSpline tps(params);
  WarpField f{grid.height, grid.width, std::vector<double>(grid.coords.size())};
  for (std::size_t k = 0; k < grid.coords.size(); k += 2) {
    const Vec2 v = tps.apply({grid.coords[k], grid.coords[k + 1]});
    f.target[k] = v.x;
    f.target[k + 1] = v.y;
  }
  return f;
}

namespace {

void check_points(const std::vector<ThinPlateSpline>& splines, const Tensor& points) {
  if (points.rank() != 3 || points.dim(2) != 2) throw ShapeError("expected keypoints [N,K,2]");
  if (static_cast<int>(splines.size()) != points.dim(0))
    throw ShapeError("one spline per batch entry required");
}

}  // namespace

Tensor tps_points(const std::vector<ThinPlateSpline>& splines, const Tensor& points) {
  check_points(splines, points);
  const int n = points.dim(0), k = points.dim(1);
  const auto pv = points.values();
  std::vector<double> out(pv.size());
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < k; ++i) {
      const std::size_t o = (static_cast<std::size_t>(b) * k + i) * 2;
      const Vec2 v = splines[static_cast<std::size_t>(b)].apply({pv[o], pv[o + 1]});
      out[o] = v.x, out[o + 1] = v.y;
    }
  return detail::make_result(points.shape(), std::move(out), {points}, [splines, n, k](detail::Node& self) {
    double* gp = detail::grad_target(self, 0);
    if (!gp) return;
    const auto& P = self.inputs[0]->value;
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < k; ++i) {
        const std::size_t o = (static_cast<std::size_t>(b) * k + i) * 2;
        const Mat2 j = splines[static_cast<std::size_t>(b)].jacobian({P[o], P[o + 1]});
        const double gx = self.grad[o], gy = self.grad[o + 1];
        gp[o] += gx * j[0] + gy * j[2];
        gp[o + 1] += gx * j[1] + gy * j[3];
      }
  });
}

Tensor tps_jacobians(const std::vector<ThinPlateSpline>& splines, const Tensor& points) {
  check_points(splines, points);
  const int n = points.dim(0), k = points.dim(1);
  const auto pv = points.values();
  std::vector<double> out(static_cast<std::size_t>(n) * k * 4);
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < k; ++i) {
      const std::size_t o = (static_cast<std::size_t>(b) * k + i) * 2;
      const Mat2 j = splines[static_cast<std::size_t>(b)].jacobian({pv[o], pv[o + 1]});
      std::copy(j.begin(), j.end(), out.begin() + static_cast<std::ptrdiff_t>(o * 2));
    }
  return detail::make_result({n, k, 2, 2}, std::move(out), {points}, [splines, n, k](detail::Node& self) {
    double* gp = detail::grad_target(self, 0);
    if (!gp) return;
    const auto& P = self.inputs[0]->value;
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < k; ++i) {
        const std::size_t o = (static_cast<std::size_t>(b) * k + i) * 2;
        const auto d = splines[static_cast<std::size_t>(b)].jacobian_derivatives({P[o], P[o + 1]});
        const double* g = self.grad.data() + o * 2;
        for (int q = 0; q < 4; ++q) {
          gp[o] += g[q] * d[0][static_cast<std::size_t>(q)];
          gp[o + 1] += g[q] * d[1][static_cast<std::size_t>(q)];
        }
      }
  });
}

}  // namespace maskedit::geometry

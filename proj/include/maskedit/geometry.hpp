#pragma once

// Coordinate conventions and warp algebra.
//
// Positions live in normalized image space [-1, 1]^2: x grows rightward,
// y downward, and the centres of the corner pixels sit exactly on +-1.
// A WarpField stores, for every output pixel, the source coordinate to read
// (backward warping), so images are resampled with bilinear gathers only.

#include <array>
#include <cstdint>
#include <vector>

#include "maskedit/image.hpp"
#include "maskedit/ops.hpp"

namespace maskedit::geometry {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

// Row-major 2x2.
using Mat2 = std::array<double, 4>;

// z -> linear * z + translation.
struct Affine2D {
  Mat2 linear{1.0, 0.0, 0.0, 1.0};
  std::array<double, 2> translation{0.0, 0.0};

  static Affine2D identity() { return {}; }
  static Affine2D shift(double tx, double ty) { return {{1.0, 0.0, 0.0, 1.0}, {tx, ty}}; }

  Vec2 apply(Vec2 z) const;
  double det() const { return linear[0] * linear[3] - linear[1] * linear[2]; }

  friend bool operator==(const Affine2D&, const Affine2D&) = default;
};

// a o b : z -> a(b(z))
Affine2D compose_affine(const Affine2D& a, const Affine2D& b);
// Throws SingularityError when |det| <= 1e-8.
Affine2D invert_affine(const Affine2D& a);

struct NormalizedGrid {
  int height = 0;
  int width = 0;
  std::vector<double> coords;  // [H, W, 2]

  Vec2 at(int row, int col) const {
    const std::size_t i = (static_cast<std::size_t>(row) * width + col) * 2;
    return {coords[i], coords[i + 1]};
  }
};

// Throws DimensionError for non-positive sizes.  A 1x1 grid holds (0, 0).
NormalizedGrid make_identity_grid(int height, int width);

// Coordinate of pixel index i along an axis of the given extent.
double normalized_coordinate(int index, int extent);

struct WarpField {
  int height = 0;
  int width = 0;
  std::vector<double> target;  // [H, W, 2]

  Vec2 at(int row, int col) const {
    const std::size_t i = (static_cast<std::size_t>(row) * width + col) * 2;
    return {target[i], target[i + 1]};
  }
  // [1, H, W, 2]
  Tensor to_tensor() const;
  static WarpField from_tensor(const Tensor& grid, int batch_index = 0);
  static WarpField identity(int height, int width);
};

WarpField affine_to_warpfield(const Affine2D& a, int height, int width);

// Bilinear backward warp of every channel; the output takes the field's size.
Image sample(const Image& image, const WarpField& warp, Padding padding);

struct TpsConfig {
  int grid_size = 5;
  double sigma = 0.15;         // bound on control-point displacement
  double affine_sigma = 0.05;  // bound on global affine jitter entries
};

struct TPSParams {
  int grid_size = 5;
  std::vector<Vec2> displacements;  // grid_size^2, row-major control grid
  Affine2D jitter;
};

TPSParams zero_tps(int grid_size);
TPSParams random_tps(const TpsConfig& config, std::uint64_t seed);

// Thin-plate interpolation of the control displacements composed with the
// affine jitter: T(z) = jitter(z) + d(z), where d passes exactly through the
// displacement at every control point.
class ThinPlateSpline {
 public:
  explicit ThinPlateSpline(const TPSParams& params);

  Vec2 apply(Vec2 z) const;
  Mat2 jacobian(Vec2 z) const;
  // d(jacobian)/dx and d(jacobian)/dy.
  std::array<Mat2, 2> jacobian_derivatives(Vec2 z) const;

  const std::vector<Vec2>& control_points() const { return controls_; }

 private:
  std::vector<Vec2> controls_;
  std::vector<Vec2> weights_;             // radial coefficients
  std::array<Vec2, 3> affine_{};          // constant, x, y coefficients
  Affine2D jitter_;
};

WarpField apply_tps(const TPSParams& params, const NormalizedGrid& grid);

// Differentiable evaluation at keypoint positions, one spline per batch
// entry.  points [N, K, 2] -> [N, K, 2] and [N, K, 2, 2] respectively.
Tensor tps_points(const std::vector<ThinPlateSpline>& splines, const Tensor& points);
Tensor tps_jacobians(const std::vector<ThinPlateSpline>& splines, const Tensor& points);

}  // namespace maskedit::geometry

#pragma once

// Shared bilinear tap computation for grid_sample and the value-type warp
// API, so both paths produce identical numbers.

#include <algorithm>
#include <cmath>

#include "maskedit/ops.hpp"

namespace maskedit::detail {

// Pixel coordinates within this distance of an integer snap onto it, so that
// an identity grid reproduces its input bit for bit.
inline constexpr double kSnapTolerance = 1e-10;

struct Tap {
  int x0, y0;
  double fx, fy;
  // d(pixel coord)/d(normalized coord); zero where border clamping is active.
  double dx_dg, dy_dg;
};

inline double to_pixel(double g, int extent, double& dpix, bool clamp) {
  if (extent <= 1) {
    dpix = 0.0;
    return 0.0;
  }
  const double scale = 0.5 * (extent - 1);
  double p = (g + 1.0) * scale;
  dpix = scale;
  if (clamp) {
    if (p <= 0.0) {
      p = 0.0;
      dpix = 0.0;
    } else if (p >= extent - 1) {
      p = extent - 1;
      dpix = 0.0;
    }
  }
  const double r = std::nearbyint(p);
  if (std::abs(p - r) < kSnapTolerance) p = r;
  return p;
}

inline Tap make_tap(double gx, double gy, int width, int height, Padding padding) {
  const bool clamp = padding == Padding::Border;
  Tap t{};
  const double px = to_pixel(gx, width, t.dx_dg, clamp);
  const double py = to_pixel(gy, height, t.dy_dg, clamp);
  const double fx0 = std::floor(px), fy0 = std::floor(py);
  t.x0 = static_cast<int>(fx0);
  t.y0 = static_cast<int>(fy0);
  t.fx = px - fx0;
  t.fy = py - fy0;
  return t;
}

// Reads plane[y][x] with padding semantics for out-of-frame pixels.
inline double read(const double* plane, int x, int y, int width, int height, Padding padding) {
  if (x >= 0 && x < width && y >= 0 && y < height) return plane[y * width + x];
  if (padding == Padding::Zeros) return 0.0;
  x = std::clamp(x, 0, width - 1);
  y = std::clamp(y, 0, height - 1);
  return plane[y * width + x];
}

struct Corners {
  double v00, v01, v10, v11;
};

inline Corners gather(const double* plane, const Tap& t, int width, int height, Padding padding) {
  return {read(plane, t.x0, t.y0, width, height, padding),
          read(plane, t.x0 + 1, t.y0, width, height, padding),
          read(plane, t.x0, t.y0 + 1, width, height, padding),
          read(plane, t.x0 + 1, t.y0 + 1, width, height, padding)};
}

inline double interpolate(const Corners& c, const Tap& t) {
  const double top = c.v00 + t.fx * (c.v01 - c.v00);
  const double bottom = c.v10 + t.fx * (c.v11 - c.v10);
  return top + t.fy * (bottom - top);
}

// Adds weight * d(out)/d(v) into the four source pixels that exist.
inline void scatter(double* plane, const Tap& t, int width, int height, double weight) {
  const double w00 = (1.0 - t.fx) * (1.0 - t.fy), w01 = t.fx * (1.0 - t.fy);
  const double w10 = (1.0 - t.fx) * t.fy, w11 = t.fx * t.fy;
  auto put = [&](int x, int y, double w) {
    if (w == 0.0) return;
    // Border padding never reads outside the frame after clamping, except
    // for the zero-weight neighbour at the last row/column.
    if (x < 0 || x >= width || y < 0 || y >= height) return;
    plane[y * width + x] += weight * w;
  };
  put(t.x0, t.y0, w00);
  put(t.x0 + 1, t.y0, w01);
  put(t.x0, t.y0 + 1, w10);
  put(t.x0 + 1, t.y0 + 1, w11);
}

}  // namespace maskedit::detail

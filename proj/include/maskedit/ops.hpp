#pragma once

// Differentiable tensor operations.  Layouts follow NCHW for images; warp
// grids are [N, H, W, 2] with (x, y) in normalized [-1, 1] coordinates.

#include <vector>

#include "maskedit/tensor.hpp"

namespace maskedit {

enum class Padding { Border, Zeros };

namespace ops {

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, int dim, bool keepdim = false);
Tensor mean(const Tensor& x, int dim, bool keepdim = false);
Tensor max(const Tensor& x, int dim, bool keepdim = false);
Tensor min(const Tensor& x, int dim, bool keepdim = false);

// One -1 entry is inferred.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& order);
Tensor slice(const Tensor& x, int dim, int start, int end);
Tensor concat(const std::vector<Tensor>& parts, int dim);
Tensor expand(const Tensor& x, Shape shape);

// Numerically stable softmax; +inf entries share all the mass.
Tensor softmax(const Tensor& x, int dim);

// [..., M, K] x [..., K, N].  b may be rank 2 and is then shared by every batch.
Tensor matmul(const Tensor& a, const Tensor& b);

// Stride-1 convolution, zero padding `pad` on each side.
// x [N, Cin, H, W], weight [Cout, Cin, k, k], bias [Cout] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int pad);
Tensor avg_pool2d(const Tensor& x, int factor);
Tensor upsample_nearest(const Tensor& x, int factor);
// Square (2r+1)^2 minimum filter; pixels outside the frame read as `outside`.
Tensor min_pool2d(const Tensor& x, int radius, double outside);

// Bilinear backward sampling, corner-aligned coordinates.
// image [N, C, H, W], grid [N, Ho, Wo, 2] -> [N, C, Ho, Wo].
Tensor grid_sample(const Tensor& image, const Tensor& grid, Padding padding);

// theta [N, 2, 3] -> grid [N, H, W, 2], grid(z) = theta[:, :2] z + theta[:, 2].
Tensor affine_grid(const Tensor& theta, int height, int width);

// Batched inverse of [..., 2, 2]; throws SingularityError when |det| <= 1e-8.
Tensor inverse2x2(const Tensor& m);

// Per-pixel convex combination of candidates.
// weights [N, M, H, W] (summing to one over M), candidates [N, M, C, H, W]
// -> [N, C, H, W].  Evaluated as c0 + sum_{i>0} w_i (c_i - c0): weights
// concentrated on candidate 0 reproduce it exactly, and identical candidates
// pass through unchanged.
Tensor convex_fusion(const Tensor& weights, const Tensor& candidates);

// Resize by bilinear sampling on a corner-aligned grid (identity when the
// size already matches).
Tensor resize_bilinear(const Tensor& x, int height, int width);

}  // namespace ops

inline Tensor operator+(const Tensor& a, const Tensor& b) { return ops::add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return ops::sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return ops::mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return ops::div(a, b); }
inline Tensor operator-(const Tensor& a) { return ops::neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return ops::mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return ops::mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return ops::add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return ops::add_scalar(a, -s); }
inline Tensor operator+(double s, const Tensor& a) { return ops::add_scalar(a, s); }
inline Tensor operator-(double s, const Tensor& a) { return ops::add_scalar(ops::neg(a), s); }

}  // namespace maskedit

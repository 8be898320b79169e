#include "maskedit/correspondence.hpp"

#include <cmath>
#include <random>

#include "maskedit/errors.hpp"

namespace maskedit {
namespace {

Tensor coordinate_table(int h, int w) {
  const geometry::NormalizedGrid g = geometry::make_identity_grid(h, w);
  return Tensor::from({h * w, 2}, g.coords);
}

void require_same_frame(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError(std::string(what) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

}  // namespace

KeypointSet keypoints_from_maps(const Tensor& heat_logits, const Tensor& jacobian_maps, double temperature) {
  if (heat_logits.rank() != 4) throw ShapeError("heatmap logits must be [N,K,h,w]");
  if (!(temperature > 0.0)) throw DimensionError("heatmap temperature must be positive");
  const int n = heat_logits.dim(0), k = heat_logits.dim(1), h = heat_logits.dim(2), w = heat_logits.dim(3);
  if (jacobian_maps.shape() != Shape{n, 4 * k, h, w})
    throw ShapeError("jacobian maps " + to_string(jacobian_maps.shape()) + " do not match " +
                     std::to_string(k) + " keypoints");
  const Tensor flat = ops::softmax(ops::reshape(heat_logits, {n, k, h * w}) * (1.0 / temperature), 2);
  KeypointSet kp;
  kp.heatmaps = ops::reshape(flat, {n, k, h, w});
  kp.positions = ops::matmul(flat, coordinate_table(h, w));
  const Tensor weighted = ops::reshape(jacobian_maps, {n, k, 4, h * w}) * ops::reshape(flat, {n, k, 1, h * w});
  kp.jacobians = ops::reshape(ops::sum(weighted, 3), {n, k, 2, 2});
  return kp;
}

CorrespondenceModel::CorrespondenceModel(const CorrespondenceConfig& config, std::uint64_t seed) : config_(config) {
  if (config.num_keypoints < 1) throw DimensionError("need at least one keypoint");
  if (!(config.temperature > 0.0)) throw DimensionError("heatmap temperature must be positive");
  std::mt19937_64 rng(seed);
  body_ = nn::Hourglass({3, config.block_expansion, config.max_features, config.num_blocks}, rng);
  heat_head_ = nn::Conv2d(body_.out_channels(), config.num_keypoints, 3, rng);
  jacobian_head_ = nn::Conv2d(body_.out_channels(), 4 * config.num_keypoints, 3, rng);
  // Start from identity Jacobians.
  std::fill(jacobian_head_.weight().mutable_values().begin(), jacobian_head_.weight().mutable_values().end(), 0.0);
  auto bias = jacobian_head_.bias().mutable_values();
  for (int i = 0; i < config.num_keypoints; ++i) {
    bias[4 * i] = 1.0;
    bias[4 * i + 3] = 1.0;
  }
}

KeypointSet CorrespondenceModel::predict(const Tensor& input) const {
  if (input.rank() != 4 || input.dim(1) != 3)
    throw ShapeError("keypoint predictor expects [N,3,H,W], got " + to_string(input.shape()));
  const Tensor x = ops::resize_bilinear(input, config_.heatmap_size, config_.heatmap_size);
  const Tensor features = body_.forward(x);
  return keypoints_from_maps(heat_head_.forward(features), jacobian_head_.forward(features), config_.temperature);
}

void CorrespondenceModel::collect(const std::string& prefix, nn::NamedTensors& out) const {
  body_.collect(prefix + ".body", out);
  heat_head_.collect(prefix + ".heat", out);
  jacobian_head_.collect(prefix + ".jacobian", out);
}

KeypointSet predict_keypoints(const CorrespondenceModel& model, const Tensor& input) { return model.predict(input); }

LocalAffines local_affines(const KeypointSet& source, const KeypointSet& driver) {
  const Tensor& ps = source.positions;
  const Tensor& js = source.jacobians;
  const Tensor& pd = driver.positions;
  const Tensor& jd = driver.jacobians;
  if (ps.shape() != pd.shape() || js.shape() != jd.shape())
    throw ShapeError("source and driver keypoint sets differ: " + to_string(ps.shape()) + " vs " +
                     to_string(pd.shape()));
  const int n = ps.dim(0), k = ps.dim(1);
  const std::size_t count = static_cast<std::size_t>(n) * k;
  const auto vps = ps.values(), vjs = js.values(), vpd = pd.values(), vjd = jd.values();

  LocalAffines out;
  out.degenerate.assign(count, false);
  std::vector<double> theta(count * 6);
  // Per keypoint: inverse of the source Jacobian (zero when degenerate) and the linear part.
  std::vector<double> inv_src(count * 4, 0.0), lin(count * 4);
  for (std::size_t i = 0; i < count; ++i) {
    const double* S = vjs.data() + 4 * i;
    const double* D = vjd.data() + 4 * i;
    const double det = S[0] * S[3] - S[1] * S[2];
    double* L = lin.data() + 4 * i;
    if (!(std::abs(det) >= kDegenerateDet)) {
      out.degenerate[i] = true;
      L[0] = 1.0, L[1] = 0.0, L[2] = 0.0, L[3] = 1.0;
    } else {
      double* Si = inv_src.data() + 4 * i;
      Si[0] = S[3] / det, Si[1] = -S[1] / det, Si[2] = -S[2] / det, Si[3] = S[0] / det;
      L[0] = D[0] * Si[0] + D[1] * Si[2];
      L[1] = D[0] * Si[1] + D[1] * Si[3];
      L[2] = D[2] * Si[0] + D[3] * Si[2];
      L[3] = D[2] * Si[1] + D[3] * Si[3];
    }
    const double sx = vps[2 * i], sy = vps[2 * i + 1];
    double* T = theta.data() + 6 * i;
    T[0] = L[0], T[1] = L[1], T[2] = vpd[2 * i] - (L[0] * sx + L[1] * sy);
    T[3] = L[2], T[4] = L[3], T[5] = vpd[2 * i + 1] - (L[2] * sx + L[3] * sy);
  }

  out.theta = detail::make_result(
      {n, k, 2, 3}, std::move(theta), {ps, js, pd, jd},
      [count, inv_src = std::move(inv_src), lin = std::move(lin), flags = out.degenerate](detail::Node& self) {
        double* g_ps = detail::grad_target(self, 0);
        double* g_js = detail::grad_target(self, 1);
        double* g_pd = detail::grad_target(self, 2);
        double* g_jd = detail::grad_target(self, 3);
        const auto& P = self.inputs[0]->value;
        for (std::size_t i = 0; i < count; ++i) {
          const double* G = self.grad.data() + 6 * i;
          const double* L = lin.data() + 4 * i;
          const double gt0 = G[2], gt1 = G[5];
          const double sx = P[2 * i], sy = P[2 * i + 1];
          if (g_pd) g_pd[2 * i] += gt0, g_pd[2 * i + 1] += gt1;
          if (g_ps) {
            g_ps[2 * i] -= L[0] * gt0 + L[2] * gt1;
            g_ps[2 * i + 1] -= L[1] * gt0 + L[3] * gt1;
          }
          if (flags[i]) continue;
          // Total gradient on the linear part, including its use in the translation.
          const double GL[4] = {G[0] - gt0 * sx, G[1] - gt0 * sy, G[3] - gt1 * sx, G[4] - gt1 * sy};
          const double* Si = inv_src.data() + 4 * i;
          // dL/dD = GL * Si^T
          const double GD[4] = {GL[0] * Si[0] + GL[1] * Si[1], GL[0] * Si[2] + GL[1] * Si[3],
                                GL[2] * Si[0] + GL[3] * Si[1], GL[2] * Si[2] + GL[3] * Si[3]};
          if (g_jd)
            for (int q = 0; q < 4; ++q) g_jd[4 * i + q] += GD[q];
          if (g_js) {
            // dL/dS = -L^T GL Si^T = -L^T GD
            g_js[4 * i + 0] -= L[0] * GD[0] + L[2] * GD[2];
            g_js[4 * i + 1] -= L[0] * GD[1] + L[2] * GD[3];
            g_js[4 * i + 2] -= L[1] * GD[0] + L[3] * GD[2];
            g_js[4 * i + 3] -= L[1] * GD[1] + L[3] * GD[3];
          }
        }
      });
  return out;
}

Tensor dilate(const Tensor& theta, int height, int width) {
  if (theta.rank() != 4 || theta.dim(2) != 2 || theta.dim(3) != 3)
    throw ShapeError("expected affine parameters [N,K,2,3], got " + to_string(theta.shape()));
  const int n = theta.dim(0), k = theta.dim(1);
  const Tensor grids = ops::affine_grid(ops::reshape(theta, {n * k, 2, 3}), height, width);
  return ops::reshape(grids, {n, k, height, width, 2});
}

std::vector<geometry::WarpField> dilate(const std::vector<geometry::Affine2D>& affines, int height, int width) {
  std::vector<geometry::WarpField> out;
  out.reserve(affines.size());
  for (const auto& a : affines) out.push_back(geometry::affine_to_warpfield(a, height, width));
  return out;
}

std::vector<geometry::Affine2D> to_affines(const Tensor& theta, int batch_index) {
  const int k = theta.dim(1);
  const auto v = theta.values();
  std::vector<geometry::Affine2D> out(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const double* t = v.data() + (static_cast<std::size_t>(batch_index) * k + i) * 6;
    out[static_cast<std::size_t>(i)] = {{t[0], t[1], t[3], t[4]}, {t[2], t[5]}};
  }
  return out;
}

Tensor masked_exemplar(const Tensor& y_A, const Tensor& y_B) {
  require_same_frame(y_A, y_B, "masked_exemplar");
  if (y_A.dim(1) != 1) throw ShapeError("exemplar mask must have one channel");
  return y_A * y_B;
}

RGBImage masked_exemplar(const BinaryMask& y_A, const RGBImage& y_B) { return apply_mask(y_A, y_B); }

Tensor mask_to_rgb(const Tensor& mask) {
  if (mask.rank() != 4 || mask.dim(1) != 1) throw ShapeError("expected a [N,1,H,W] mask");
  return ops::concat({mask, mask, mask}, 1);
}

Tensor warp_candidates(const Tensor& source, const Tensor& fields, Padding padding) {
  if (source.rank() != 4 || fields.rank() != 5 || fields.dim(0) != source.dim(0) || fields.dim(4) != 2)
    throw ShapeError("cannot warp " + to_string(source.shape()) + " through fields " + to_string(fields.shape()));
  const int n = source.dim(0), c = source.dim(1), h = source.dim(2), w = source.dim(3);
  const int k = fields.dim(1), ho = fields.dim(2), wo = fields.dim(3);
  const Tensor stacked = ops::reshape(ops::expand(ops::reshape(source, {n, 1, c, h, w}), {n, k, c, h, w}),
                                      {n * k, c, h, w});
  const Tensor out = ops::grid_sample(stacked, ops::reshape(fields, {n * k, ho, wo, 2}), padding);
  return ops::reshape(out, {n, k, c, ho, wo});
}

CorrespondenceOutput correspond(const CorrespondenceModel& model, const Tensor& x_A, const Tensor& y_A,
                                const Tensor& y_B) {
  require_same_frame(x_A, y_A, "correspond masks");
  require_same_frame(y_A, y_B, "correspond exemplar");
  if (x_A.dim(1) != 1 || y_A.dim(1) != 1 || y_B.dim(1) != 3)
    throw ShapeError("correspond expects 1-channel masks and a 3-channel exemplar");
  const int n = x_A.dim(0), h = x_A.dim(2), w = x_A.dim(3);
  CorrespondenceOutput out;
  out.source = model.predict(mask_to_rgb(x_A));
  out.driver = model.predict(masked_exemplar(y_A, y_B));
  out.affines = local_affines(out.source, out.driver);
  out.fields = dilate(out.affines.theta, h, w);
  const int k = out.source.count();
  out.warped_masks = ops::reshape(warp_candidates(y_A, out.fields, Padding::Zeros), {n, k, h, w});
  out.warped_images = warp_candidates(y_B, out.fields, Padding::Border);
  return out;
}

CorrespondenceOutput correspond(const CorrespondenceModel& model, const BinaryMask& x_A, const BinaryMask& y_A,
                                const RGBImage& y_B) {
  return correspond(model, x_A.to_tensor(), y_A.to_tensor(), y_B.to_tensor());
}

}  // namespace maskedit

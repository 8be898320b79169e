#include "maskedit/losses.hpp"

#include <cmath>

#include "maskedit/errors.hpp"
#include "maskedit/ops.hpp"

namespace maskedit {
namespace {

Tensor mean_abs(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  return ops::mean(ops::abs(a - b));
}

}  // namespace

Tensor soft_boundary(const Tensor& mask, int dilation) {
  if (dilation < 1) throw DimensionError("boundary dilation must be at least one pixel");
  return mask - ops::min_pool2d(mask, dilation, 0.0);
}

Tensor boundary_iou_loss(const Tensor& warped_masks, const Tensor& x_A, int dilation) {
  if (warped_masks.rank() != 4 || x_A.rank() != 4 || x_A.dim(1) != 1 || x_A.dim(0) != warped_masks.dim(0) ||
      x_A.dim(2) != warped_masks.dim(2) || x_A.dim(3) != warped_masks.dim(3))
    throw ShapeError("boundary IoU: " + to_string(warped_masks.shape()) + " vs " + to_string(x_A.shape()));
  const int n = warped_masks.dim(0), k = warped_masks.dim(1), h = x_A.dim(2), w = x_A.dim(3);
  const Tensor bw = ops::reshape(soft_boundary(warped_masks, dilation), {n, k, h * w});
  const Tensor bx = ops::reshape(soft_boundary(x_A, dilation), {n, 1, h * w});
  const Tensor inter = ops::sum(ops::minimum(bw, bx), 2);
  const Tensor uni = ops::sum(ops::maximum(bw, bx), 2);
  return ops::mean(1.0 - inter / (uni + kBoundaryEpsilon));
}

Tensor contextual_similarity_loss(const Tensor& features, const Tensor& target, double bandwidth, double epsilon) {
  if (features.shape() != target.shape() || features.rank() != 4)
    throw ShapeError("contextual loss needs equal feature shapes, got " + to_string(features.shape()) + " vs " +
                     to_string(target.shape()));
  const int n = features.dim(0), c = features.dim(1), p = features.dim(2) * features.dim(3);
  const Tensor x = ops::permute(ops::reshape(features, {n, c, p}), {0, 2, 1});  // [N, P, C]
  const Tensor y = ops::permute(ops::reshape(target, {n, c, p}), {0, 2, 1});
  const Tensor mu = ops::mean(y, 1, true);
  auto unit = [](const Tensor& v) { return v / ops::sqrt(ops::sum(ops::square(v), 2, true) + 1e-12); };
  const Tensor xn = unit(x - mu), yn = unit(y - mu);
  const Tensor dist = 1.0 - ops::matmul(xn, ops::permute(yn, {0, 2, 1}));  // [N, P(x), P(y)]
  const Tensor rel = dist / (ops::min(dist, 2, true) + epsilon);
  const Tensor cx = ops::softmax((1.0 - rel) * (1.0 / bandwidth), 2);
  const Tensor score = ops::mean(ops::max(cx, 1), 1);  // [N]
  return ops::mean(-ops::log(score + 1e-12));
}

Tensor contextual_loss(const Tensor& image, const Tensor& target, const ContextualConfig& cfg,
                       const FeatureExtractor& phi) {
  if (cfg.layers.empty() || cfg.layers.size() != cfg.weights.size())
    throw DimensionError("contextual loss needs one weight per layer and at least one layer");
  const auto fa = phi.forward(image, cfg.layers);
  std::map<std::string, Tensor> fb;
  {
    NoGradGuard guard;
    fb = phi.forward(target, cfg.layers);
  }
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    if (cfg.weights[i] < 0.0) throw DimensionError("contextual layer weights must be nonnegative");
    if (cfg.weights[i] == 0.0) continue;
    const auto& name = cfg.layers[i];
    total = total + cfg.weights[i] * contextual_similarity_loss(fa.at(name), fb.at(name), cfg.bandwidth, cfg.epsilon);
  }
  return total;
}

Tensor perceptual_loss(const Tensor& a, const Tensor& b, const FeatureExtractor& phi,
                       const std::vector<std::string>& layers) {
  const auto fa = phi.forward(a, layers);
  const auto fb = phi.forward(b, layers);
  Tensor total = Tensor::scalar(0.0);
  for (const auto& name : layers) total = total + mean_abs(fa.at(name), fb.at(name), "perceptual loss");
  return total;
}

Tensor equivariance_loss(const KeypointSet& on_image, const KeypointSet& on_deformed,
                         const std::vector<geometry::ThinPlateSpline>& splines) {
  const Tensor mapped = geometry::tps_points(splines, on_deformed.positions);
  const Tensor value = mean_abs(on_image.positions, mapped, "equivariance positions");
  const Tensor grad_t = geometry::tps_jacobians(splines, on_deformed.positions);
  const Tensor carried = ops::matmul(grad_t, on_deformed.jacobians);
  return value + mean_abs(on_image.jacobians, carried, "equivariance jacobians");
}

Tensor deform(const Tensor& image, const std::vector<geometry::TPSParams>& tps, Padding padding) {
  if (image.rank() != 4 || static_cast<int>(tps.size()) != image.dim(0))
    throw ShapeError("need one TPS per batch entry");
  const int h = image.dim(2), w = image.dim(3);
  const geometry::NormalizedGrid grid = geometry::make_identity_grid(h, w);
  std::vector<double> fields;
  fields.reserve(tps.size() * grid.coords.size());
  for (const auto& params : tps) {
    const auto f = geometry::apply_tps(params, grid);
    fields.insert(fields.end(), f.target.begin(), f.target.end());
  }
  return ops::grid_sample(image, Tensor::from({image.dim(0), h, w, 2}, std::move(fields)), padding);
}

Tensor equivariance_loss(const CorrespondenceModel& model, const Tensor& image,
                         const std::vector<geometry::TPSParams>& tps) {
  std::vector<geometry::ThinPlateSpline> splines;
  splines.reserve(tps.size());
  for (const auto& p : tps) splines.emplace_back(p);
  const KeypointSet on_image = model.predict(image);
  const KeypointSet on_deformed = model.predict(deform(image, tps, Padding::Border));
  return equivariance_loss(on_image, on_deformed, splines);
}

MaskLosses mask_alignment_losses(const Tensor& x_hat_A, const Tensor& x_hat_A_pseudo, const Tensor& x_A) {
  return {mean_abs(x_hat_A, x_A, "transport mask loss"), mean_abs(x_hat_A_pseudo, x_A, "guidance mask loss")};
}

Tensor reconstruction_loss(const Tensor& x_hat_B, const Tensor& x_hat_B_pseudo) {
  return mean_abs(x_hat_B, x_hat_B_pseudo, "reconstruction loss");
}

Tensor cycle_loss(const Tensor& y_B, const Tensor& y_hat_B) { return mean_abs(y_B, y_hat_B, "cycle loss"); }

TotalLoss total_loss(const LossTerms& t, const LossWeights& w) {
  const std::pair<const char*, std::pair<const Tensor*, double>> parts[] = {
      {"eq", {&t.eq, w.eq}},         {"perc", {&t.perc, w.perc}}, {"context", {&t.context, w.context}},
      {"bound", {&t.bound, w.bound}}, {"mask_I", {&t.mask_I, w.mask}}, {"mask_T", {&t.mask_T, w.mask}},
      {"rec", {&t.rec, w.rec}},       {"cyc", {&t.cyc, w.cyc}}};
  TotalLoss out;
  out.total = Tensor::scalar(0.0);
  for (const auto& [name, part] : parts) {
    const auto [term, weight] = part;
    if (weight < 0.0) throw DimensionError(std::string("loss weight for ") + name + " is negative");
    if (!term->defined()) continue;
    out.breakdown[name] = term->item();
    if (weight != 0.0) out.total = out.total + weight * *term;
  }
  out.breakdown["total"] = out.total.item();
  return out;
}

}  // namespace maskedit

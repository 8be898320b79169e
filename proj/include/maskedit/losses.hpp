#pragma once

#include <map>
#include <string>
#include <vector>

#include "maskedit/correspondence.hpp"
#include "maskedit/features.hpp"
#include "maskedit/geometry.hpp"

namespace maskedit {

struct LossWeights {
  double eq = 10.0;
  double perc = 10.0;
  double context = 1.0;
  double bound = 10.0;
  double mask = 10.0;
  double rec = 10.0;
  double cyc = 10.0;
};

struct ContextualConfig {
  std::vector<std::string> layers{"relu2", "relu3", "relu4"};
  std::vector<double> weights{1.0, 1.0, 1.0};
  double bandwidth = 0.5;
  double epsilon = 1e-5;
};

inline constexpr double kBoundaryEpsilon = 1e-6;

// m - erode_d(m), erosion = (2d+1)^2 min filter with the outside of the frame
// treated as background.  m [N, C, H, W].
Tensor soft_boundary(const Tensor& mask, int dilation);

// Mean over batch and K of 1 - sum(min(Bw, Bx)) / (sum(max(Bw, Bx)) + eps).
// warped_masks [N, K, H, W], x_A [N, 1, H, W].
Tensor boundary_iou_loss(const Tensor& warped_masks, const Tensor& x_A, int dilation = 2);

// -log CX between two feature maps [N, C, H, W]; averaged over the batch.
Tensor contextual_similarity_loss(const Tensor& features, const Tensor& target, double bandwidth, double epsilon);
Tensor contextual_loss(const Tensor& image, const Tensor& target, const ContextualConfig& cfg,
                       const FeatureExtractor& phi);

// Sum over layers of the mean absolute feature difference.
Tensor perceptual_loss(const Tensor& a, const Tensor& b, const FeatureExtractor& phi,
                       const std::vector<std::string>& layers = FeatureExtractor::layer_names());

// Keypoints on an image and on its deformation deformed(z) = image(T(z)):
// |p_img - T(p_def)| + |J_img - dT(p_def) J_def|, both as means.
Tensor equivariance_loss(const KeypointSet& on_image, const KeypointSet& on_deformed,
                         const std::vector<geometry::ThinPlateSpline>& splines);
Tensor equivariance_loss(const CorrespondenceModel& model, const Tensor& image,
                         const std::vector<geometry::TPSParams>& tps);

// Deforms every batch entry by its own spline: out(z) = image(T(z)).
Tensor deform(const Tensor& image, const std::vector<geometry::TPSParams>& tps, Padding padding);

struct MaskLosses {
  Tensor transport;  // |x_A hat - x_A|
  Tensor guidance;   // |x_A hat^P - x_A|
};
MaskLosses mask_alignment_losses(const Tensor& x_hat_A, const Tensor& x_hat_A_pseudo, const Tensor& x_A);

Tensor reconstruction_loss(const Tensor& x_hat_B, const Tensor& x_hat_B_pseudo);
Tensor cycle_loss(const Tensor& y_B, const Tensor& y_hat_B);

// Undefined terms contribute nothing.
struct LossTerms {
  Tensor eq, perc, context, bound, mask_I, mask_T, rec, cyc;
};

struct TotalLoss {
  Tensor total;
  std::map<std::string, double> breakdown;  // raw term values plus "total"
};

TotalLoss total_loss(const LossTerms& terms, const LossWeights& w);

}  // namespace maskedit

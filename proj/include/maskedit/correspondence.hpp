#pragma once

// Mask-driven correspondence: a shared keypoint predictor runs on the
// conditional mask and on the masked exemplar, each keypoint pair yields a
// local affine map, and every affine is evaluated over the full output grid.

#include <cstdint>
#include <vector>

#include "maskedit/geometry.hpp"
#include "maskedit/image.hpp"
#include "maskedit/nn.hpp"

namespace maskedit {

struct CorrespondenceConfig {
  int num_keypoints = 10;
  double temperature = 0.1;
  int heatmap_size = 64;  // internal resolution of the predictor
  int block_expansion = 4;
  int max_features = 32;
  int num_blocks = 5;
};

struct KeypointSet {
  Tensor positions;  // [N, K, 2]
  Tensor jacobians;  // [N, K, 2, 2]
  Tensor heatmaps;   // [N, K, h, w]

  int count() const { return positions.dim(1); }
};

// Softargmax keypoints from raw predictor outputs.
// heat_logits [N, K, h, w]; jacobian_maps [N, 4K, h, w] (row-major 2x2 per keypoint).
KeypointSet keypoints_from_maps(const Tensor& heat_logits, const Tensor& jacobian_maps, double temperature);

class CorrespondenceModel {
 public:
  CorrespondenceModel() = default;
  CorrespondenceModel(const CorrespondenceConfig& config, std::uint64_t seed);

  // input [N, 3, H, W]; resized internally to heatmap_size.
  KeypointSet predict(const Tensor& input) const;

  const CorrespondenceConfig& config() const { return config_; }
  void collect(const std::string& prefix, nn::NamedTensors& out) const;

 private:
  CorrespondenceConfig config_;
  nn::Hourglass body_;
  nn::Conv2d heat_head_;
  nn::Conv2d jacobian_head_;
};

KeypointSet predict_keypoints(const CorrespondenceModel& model, const Tensor& input);

struct LocalAffines {
  Tensor theta;                   // [N, K, 2, 3]; row-major linear | translation
  std::vector<bool> degenerate;  // N*K flags, source Jacobian near-singular
};

inline constexpr double kDegenerateDet = 1e-6;

// Output-frame -> exemplar-frame maps:
// linear = J_drv * inv(J_src), translation = p_drv - linear * p_src.
LocalAffines local_affines(const KeypointSet& source, const KeypointSet& driver);

// theta [N, K, 2, 3] -> fields [N, K, H, W, 2].
Tensor dilate(const Tensor& theta, int height, int width);
std::vector<geometry::WarpField> dilate(const std::vector<geometry::Affine2D>& affines, int height, int width);

std::vector<geometry::Affine2D> to_affines(const Tensor& theta, int batch_index = 0);

// y_A [N, 1, H, W] * y_B [N, 3, H, W]
Tensor masked_exemplar(const Tensor& y_A, const Tensor& y_B);
RGBImage masked_exemplar(const BinaryMask& y_A, const RGBImage& y_B);

// Replicates a single-channel mask to three channels.
Tensor mask_to_rgb(const Tensor& mask);

struct CorrespondenceOutput {
  KeypointSet source;      // from x_A
  KeypointSet driver;      // from y_A * y_B
  LocalAffines affines;
  Tensor fields;          // [N, K, H, W, 2]
  Tensor warped_masks;    // [N, K, H, W]
  Tensor warped_images;   // [N, K, 3, H, W]
};

// x_A, y_A [N, 1, H, W]; y_B [N, 3, H, W].
CorrespondenceOutput correspond(const CorrespondenceModel& model, const Tensor& x_A, const Tensor& y_A,
                                const Tensor& y_B);
CorrespondenceOutput correspond(const CorrespondenceModel& model, const BinaryMask& x_A, const BinaryMask& y_A,
                                const RGBImage& y_B);

// Warps K candidates through K fields: source [N, C, H, W], fields
// [N, K, Ho, Wo, 2] -> [N, K, C, Ho, Wo].
Tensor warp_candidates(const Tensor& source, const Tensor& fields, Padding padding);

}  // namespace maskedit

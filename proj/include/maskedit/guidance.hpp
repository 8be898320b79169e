#pragma once

// Texture guidance: fuse the K warp fields into one and warp the exemplar
// once to obtain a seam-free pseudo ground truth.

#include <cstdint>

#include "maskedit/transport.hpp"

namespace maskedit {

class GuidanceModel {
 public:
  GuidanceModel() = default;
  GuidanceModel(int num_keypoints, const AttentionConfig& config, std::uint64_t seed);

  // [N, K, H, W] logits.
  Tensor logits(const Tensor& warped_masks, const Tensor& conf_masks, const Tensor& exemplar) const;
  int num_keypoints() const { return num_keypoints_; }
  void collect(const std::string& prefix, nn::NamedTensors& out) const;

 private:
  int num_keypoints_ = 0;
  nn::AttentionNet net_;
};

Tensor attention_T(const GuidanceModel& model, const Tensor& warped_masks, const Tensor& conf_masks,
                   const Tensor& exemplar);

// attn [N, K, H, W], fields [N, K, H, W, 2] -> [N, H, W, 2].
Tensor fuse_warpfields(const Tensor& attn, const Tensor& fields);

struct PseudoGT {
  Tensor field;  // [N, H, W, 2]
  Tensor mask;   // [N, 1, H, W]
  Tensor image;  // [N, 3, H, W]
};

// One sampling call per output; masks use zero padding, images border.
PseudoGT pseudo_ground_truth(const Tensor& field, const Tensor& y_A, const Tensor& y_B);

}  // namespace maskedit

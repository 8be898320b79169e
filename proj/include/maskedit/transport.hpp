#pragma once

// Region transportation: the output is a per-pixel convex combination of the
// unwarped exemplar (candidate 0) and the K warped exemplar candidates.

#include <cstdint>

#include "maskedit/nn.hpp"

namespace maskedit {

struct AttentionConfig {
  int block_expansion = 8;
  int max_features = 32;
  int num_blocks = 4;
};

// Attention input: K warped masks, K confidence masks, masked exemplar (3).
Tensor attention_input(const Tensor& warped_masks, const Tensor& conf_masks, const Tensor& exemplar);

class TransportModel {
 public:
  TransportModel() = default;
  TransportModel(int num_keypoints, const AttentionConfig& config, std::uint64_t seed);

  // [N, K+1, H, W] logits; channel 0 is the background candidate.
  Tensor logits(const Tensor& warped_masks, const Tensor& conf_masks, const Tensor& exemplar) const;
  int num_keypoints() const { return num_keypoints_; }
  void collect(const std::string& prefix, nn::NamedTensors& out) const;

 private:
  int num_keypoints_ = 0;
  nn::AttentionNet net_;
};

// m_f^i = x_A - warped_i.  x_A [N, 1, H, W], warped_masks [N, K, H, W].
Tensor confidence_masks(const Tensor& x_A, const Tensor& warped_masks);

Tensor attention_I(const TransportModel& model, const Tensor& warped_masks, const Tensor& conf_masks,
                   const Tensor& exemplar);

struct TransportResult {
  Tensor mask;   // x_A hat [N, 1, H, W]
  Tensor image;  // x_B hat [N, 3, H, W]
};

// attn [N, K+1, H, W]; warped_images [N, K, 3, H, W]; warped_masks [N, K, H, W].
TransportResult transport(const Tensor& attn, const Tensor& warped_images, const Tensor& warped_masks,
                          const Tensor& y_B, const Tensor& y_A);

}  // namespace maskedit

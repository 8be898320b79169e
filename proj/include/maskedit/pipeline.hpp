#pragma once

// The three trainable parts wired together: correspondence, transport and
// texture guidance, plus the role-swapped cycle pass.

#include <cstdint>
#include <string>

#include "maskedit/correspondence.hpp"
#include "maskedit/guidance.hpp"
#include "maskedit/transport.hpp"

namespace maskedit {

struct ModelConfig {
  int num_keypoints = 10;
  double temperature = 0.1;
  int heatmap_size = 64;
  int predictor_expansion = 4;
  int predictor_max_features = 32;
  int predictor_blocks = 5;
  AttentionConfig attention;

  CorrespondenceConfig correspondence() const {
    return {num_keypoints, temperature, heatmap_size, predictor_expansion, predictor_max_features, predictor_blocks};
  }
};

struct Pipeline {
  ModelConfig config;
  CorrespondenceModel correspondence;
  TransportModel transport;
  GuidanceModel guidance;

  static Pipeline create(const ModelConfig& config, std::uint64_t seed);

  // Segment name ("correspondence", "transport", "guidance") -> tensors.
  nn::NamedTensors segment(const std::string& name) const;
  nn::NamedTensors parameters() const;
};

inline const char* const kSegments[] = {"correspondence", "transport", "guidance"};

struct ForwardOutput {
  CorrespondenceOutput corr;
  Tensor exemplar;     // y_A * y_B
  Tensor confidence;   // [N, K, H, W]
  Tensor attention_I;  // [N, K+1, H, W]
  TransportResult result;
  Tensor attention_T;  // [N, K, H, W], undefined without guidance
  PseudoGT pseudo;     // undefined without guidance
};

// x_A, y_A [N, 1, H, W]; y_B [N, 3, H, W].
ForwardOutput forward(const Pipeline& p, const Tensor& x_A, const Tensor& y_A, const Tensor& y_B,
                      bool with_guidance = true);

// Runs the transport path with conditional mask y_A and the pseudo ground
// truth as exemplar; returns the reconstructed exemplar image.  With
// `detach`, no gradient reaches the pseudo ground truth from this pass.
Tensor cycle_pass(const Pipeline& p, const Tensor& y_A, const PseudoGT& pseudo, bool detach = false);

}  // namespace maskedit

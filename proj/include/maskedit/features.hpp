#pragma once

// Frozen convolutional feature backbone shared by the perceptual,
// contextual, style and LPIPS-style terms.
//
// Four conv+ReLU stages with 2x average pooling between them; layer names
// are relu1 (full resolution, 16 ch), relu2 (1/2, 32 ch), relu3 (1/4, 32 ch)
// and relu4 (1/8, 64 ch).  Weights come from a fixed seed and never receive
// gradients; gradients do flow to the input image.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "maskedit/nn.hpp"

namespace maskedit {

inline constexpr std::uint64_t kBackboneSeed = 0x5eed'0f'fea7ull;

class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed = kBackboneSeed);

  // x [N, 3, H, W] in [0, 1]; H and W divisible by 8.
  std::map<std::string, Tensor> forward(const Tensor& x) const;
  // Stops after the deepest requested layer.
  std::map<std::string, Tensor> forward(const Tensor& x, const std::vector<std::string>& layers) const;

  static const std::vector<std::string>& layer_names();
  // Weight and bias per stage, named "<layer>.weight" / "<layer>.bias".
  nn::NamedTensors weights() const;

 private:
  std::vector<nn::Conv2d> stages_;
};

// Process-wide instance built on first use.
const FeatureExtractor& default_features();

}  // namespace maskedit

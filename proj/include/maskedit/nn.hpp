#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "maskedit/tensor.hpp"

namespace maskedit::nn {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

class Conv2d {
 public:
  Conv2d() = default;
  // He-uniform weights, zero bias.
  Conv2d(int in_channels, int out_channels, int kernel, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;

  int in_channels() const { return weight_.dim(1); }
  int out_channels() const { return weight_.dim(0); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
  int pad_ = 0;
};

struct HourglassConfig {
  int in_channels = 3;
  int block_expansion = 8;
  int max_features = 64;
  int num_blocks = 4;
};

// Encoder of conv+pool blocks, decoder of upsample+conv blocks with skip
// concatenation; the output keeps the input resolution and has
// block_expansion + in_channels channels.
class Hourglass {
 public:
  Hourglass() = default;
  Hourglass(const HourglassConfig& config, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
  int out_channels() const { return config_.block_expansion + config_.in_channels; }
  const HourglassConfig& config() const { return config_; }

 private:
  HourglassConfig config_;
  std::vector<Conv2d> down_;
  std::vector<Conv2d> up_;
};

// Hourglass followed by a zero-initialised 3x3 logit head, so a fresh network
// produces uniform attention.
class AttentionNet {
 public:
  AttentionNet() = default;
  AttentionNet(const HourglassConfig& body, int out_channels, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
  int in_channels() const { return body_.config().in_channels; }
  int out_channels() const { return head_.out_channels(); }

 private:
  Hourglass body_;
  Conv2d head_;
};

inline constexpr double kLeakySlope = 0.1;

// Ties a model's named tensors to a flat list of parameter handles.
NamedTensors parameters_of(const auto& module, const std::string& prefix) {
  NamedTensors out;
  module.collect(prefix, out);
  return out;
}

}  // namespace maskedit::nn

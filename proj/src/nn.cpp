#include "maskedit/nn.hpp"

#include <algorithm>
#include <cmath>

#include "maskedit/errors.hpp"
#include "maskedit/ops.hpp"

namespace maskedit::nn {

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, std::mt19937_64& rng) : pad_(kernel / 2) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || kernel % 2 == 0)
    throw DimensionError("invalid Conv2d configuration");
  const int fan_in = in_channels * kernel * kernel;
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(static_cast<std::size_t>(out_channels) * fan_in);
  for (double& v : w) v = dist(rng);
  weight_ = Tensor::parameter({out_channels, in_channels, kernel, kernel}, std::move(w));
  bias_ = Tensor::parameter({out_channels}, std::vector<double>(static_cast<std::size_t>(out_channels), 0.0));
}

Tensor Conv2d::forward(const Tensor& x) const { return ops::conv2d(x, weight_, bias_, pad_); }

void Conv2d::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight_);
  out.emplace_back(prefix + ".bias", bias_);
}

Hourglass::Hourglass(const HourglassConfig& config, std::mt19937_64& rng) : config_(config) {
  if (config.num_blocks < 1) throw DimensionError("hourglass needs at least one block");
  auto width = [&](int level) {
    return std::min(config.max_features, config.block_expansion * (1 << level));
  };
  for (int i = 0; i < config.num_blocks; ++i) {
    const int in = i == 0 ? config.in_channels : width(i);
    down_.emplace_back(in, width(i + 1), 3, rng);
  }
  for (int i = config.num_blocks - 1; i >= 0; --i) {
    const int in = (i == config.num_blocks - 1 ? 1 : 2) * width(i + 1);
    up_.emplace_back(in, width(i), 3, rng);
  }
}

Tensor Hourglass::forward(const Tensor& x) const {
  const int factor = 1 << config_.num_blocks;
  if (x.rank() != 4 || x.dim(1) != config_.in_channels || x.dim(2) % factor || x.dim(3) % factor)
    throw ShapeError("hourglass input " + to_string(x.shape()) + " needs " +
                     std::to_string(config_.in_channels) + " channels and sides divisible by " +
                     std::to_string(factor));
  std::vector<Tensor> skips{x};
  for (const auto& conv : down_)
    skips.push_back(ops::avg_pool2d(ops::leaky_relu(conv.forward(skips.back()), kLeakySlope), 2));
  Tensor out = skips.back();
  skips.pop_back();
  for (const auto& conv : up_) {
    out = ops::leaky_relu(conv.forward(ops::upsample_nearest(out, 2)), kLeakySlope);
    out = ops::concat({out, skips.back()}, 1);
    skips.pop_back();
  }
  return out;
}

void Hourglass::collect(const std::string& prefix, NamedTensors& out) const {
  for (std::size_t i = 0; i < down_.size(); ++i) down_[i].collect(prefix + ".down" + std::to_string(i), out);
  for (std::size_t i = 0; i < up_.size(); ++i) up_[i].collect(prefix + ".up" + std::to_string(i), out);
}

AttentionNet::AttentionNet(const HourglassConfig& body, int out_channels, std::mt19937_64& rng)
    : body_(body, rng), head_(body_.out_channels(), out_channels, 3, rng) {
  for (double& v : head_.weight().mutable_values()) v = 0.0;
}

Tensor AttentionNet::forward(const Tensor& x) const { return head_.forward(body_.forward(x)); }

void AttentionNet::collect(const std::string& prefix, NamedTensors& out) const {
  body_.collect(prefix + ".body", out);
  head_.collect(prefix + ".head", out);
}

}  // namespace maskedit::nn

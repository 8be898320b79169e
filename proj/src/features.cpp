#include "maskedit/features.hpp"

#include <algorithm>
#include <random>

#include "maskedit/errors.hpp"
#include "maskedit/ops.hpp"

namespace maskedit {

const std::vector<std::string>& FeatureExtractor::layer_names() {
  static const std::vector<std::string> names{"relu1", "relu2", "relu3", "relu4"};
  return names;
}

FeatureExtractor::FeatureExtractor(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int widths[] = {3, 16, 32, 32, 64};
  for (int i = 0; i < 4; ++i) {
    nn::Conv2d conv(widths[i], widths[i + 1], 3, rng);
    conv.weight().set_requires_grad(false);
    conv.bias().set_requires_grad(false);
    stages_.push_back(std::move(conv));
  }
}

std::map<std::string, Tensor> FeatureExtractor::forward(const Tensor& x) const { return forward(x, layer_names()); }

std::map<std::string, Tensor> FeatureExtractor::forward(const Tensor& x, const std::vector<std::string>& layers) const {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) % 8 || x.dim(3) % 8)
    throw ShapeError("feature backbone expects [N,3,H,W] with sides divisible by 8, got " + to_string(x.shape()));
  int deepest = -1;
  for (const auto& name : layers) {
    const auto it = std::find(layer_names().begin(), layer_names().end(), name);
    if (it == layer_names().end()) throw NotFoundError("unknown feature layer " + name);
    deepest = std::max(deepest, static_cast<int>(it - layer_names().begin()));
  }
  std::map<std::string, Tensor> out;
  Tensor h = x * 2.0 - 1.0;
  for (int i = 0; i <= deepest; ++i) {
    if (i > 0) h = ops::avg_pool2d(h, 2);
    h = ops::relu(stages_[static_cast<std::size_t>(i)].forward(h));
    const std::string& name = layer_names()[static_cast<std::size_t>(i)];
    if (std::find(layers.begin(), layers.end(), name) != layers.end()) out.emplace(name, h);
  }
  return out;
}

nn::NamedTensors FeatureExtractor::weights() const {
  nn::NamedTensors out;
  for (std::size_t i = 0; i < stages_.size(); ++i) stages_[i].collect(layer_names()[i], out);
  return out;
}

const FeatureExtractor& default_features() {
  static const FeatureExtractor instance;
  return instance;
}

}  // namespace maskedit

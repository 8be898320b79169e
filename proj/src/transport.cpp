#include "maskedit/transport.hpp"

#include <random>

#include "maskedit/errors.hpp"
#include "maskedit/ops.hpp"

namespace maskedit {

Tensor attention_input(const Tensor& warped_masks, const Tensor& conf_masks, const Tensor& exemplar) {
  if (warped_masks.rank() != 4 || warped_masks.shape() != conf_masks.shape())
    throw ShapeError("warped masks " + to_string(warped_masks.shape()) + " and confidence masks " +
                     to_string(conf_masks.shape()) + " differ");
  if (exemplar.rank() != 4 || exemplar.dim(1) != 3 || exemplar.dim(0) != warped_masks.dim(0) ||
      exemplar.dim(2) != warped_masks.dim(2) || exemplar.dim(3) != warped_masks.dim(3))
    throw ShapeError("exemplar " + to_string(exemplar.shape()) + " does not match the warped masks");
  return ops::concat({warped_masks, conf_masks, exemplar}, 1);
}

TransportModel::TransportModel(int num_keypoints, const AttentionConfig& config, std::uint64_t seed)
    : num_keypoints_(num_keypoints) {
  if (num_keypoints < 1) throw DimensionError("need at least one keypoint");
  std::mt19937_64 rng(seed);
  net_ = nn::AttentionNet({2 * num_keypoints + 3, config.block_expansion, config.max_features, config.num_blocks},
                          num_keypoints + 1, rng);
}

Tensor TransportModel::logits(const Tensor& warped_masks, const Tensor& conf_masks, const Tensor& exemplar) const {
  if (warped_masks.rank() != 4 || warped_masks.dim(1) != num_keypoints_)
    throw ShapeError("transport model expects " + std::to_string(num_keypoints_) + " warped masks, got " +
                     to_string(warped_masks.shape()));
  return net_.forward(attention_input(warped_masks, conf_masks, exemplar));
}

void TransportModel::collect(const std::string& prefix, nn::NamedTensors& out) const { net_.collect(prefix, out); }

Tensor confidence_masks(const Tensor& x_A, const Tensor& warped_masks) {
  if (x_A.rank() != 4 || x_A.dim(1) != 1 || warped_masks.rank() != 4 || x_A.dim(0) != warped_masks.dim(0) ||
      x_A.dim(2) != warped_masks.dim(2) || x_A.dim(3) != warped_masks.dim(3))
    throw ShapeError("confidence masks: " + to_string(x_A.shape()) + " vs " + to_string(warped_masks.shape()));
  return x_A - warped_masks;
}

Tensor attention_I(const TransportModel& model, const Tensor& warped_masks, const Tensor& conf_masks,
                   const Tensor& exemplar) {
  return ops::softmax(model.logits(warped_masks, conf_masks, exemplar), 1);
}

TransportResult transport(const Tensor& attn, const Tensor& warped_images, const Tensor& warped_masks,
                          const Tensor& y_B, const Tensor& y_A) {
  if (attn.rank() != 4 || warped_masks.rank() != 4 || warped_images.rank() != 5)
    throw ShapeError("transport expects attention [N,K+1,H,W], images [N,K,3,H,W], masks [N,K,H,W]");
  const int n = attn.dim(0), k = warped_masks.dim(1), h = attn.dim(2), w = attn.dim(3);
  if (attn.dim(1) != k + 1 || warped_images.dim(1) != k)
    throw ShapeError(std::to_string(attn.dim(1)) + " attention maps for " + std::to_string(k) +
                     " warped candidates (expected K+1)");
  if (y_B.shape() != Shape{n, 3, h, w} || y_A.shape() != Shape{n, 1, h, w} ||
      warped_images.shape() != Shape{n, k, 3, h, w} || warped_masks.shape() != Shape{n, k, h, w})
    throw ShapeError("transport candidates do not share one frame");
  const Tensor masks = ops::concat({ops::reshape(y_A, {n, 1, 1, h, w}), ops::reshape(warped_masks, {n, k, 1, h, w})}, 1);
  const Tensor images = ops::concat({ops::reshape(y_B, {n, 1, 3, h, w}), warped_images}, 1);
  return {ops::convex_fusion(attn, masks), ops::convex_fusion(attn, images)};
}

}  // namespace maskedit

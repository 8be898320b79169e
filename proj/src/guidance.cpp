#include "maskedit/guidance.hpp"

#include <random>

#include "maskedit/errors.hpp"
#include "maskedit/ops.hpp"

namespace maskedit {

GuidanceModel::GuidanceModel(int num_keypoints, const AttentionConfig& config, std::uint64_t seed)
    : num_keypoints_(num_keypoints) {
  if (num_keypoints < 1) throw DimensionError("need at least one keypoint");
  std::mt19937_64 rng(seed);
  net_ = nn::AttentionNet({2 * num_keypoints + 3, config.block_expansion, config.max_features, config.num_blocks},
                          num_keypoints, rng);
}

Tensor GuidanceModel::logits(const Tensor& warped_masks, const Tensor& conf_masks, const Tensor& exemplar) const {
  if (warped_masks.rank() != 4 || warped_masks.dim(1) != num_keypoints_)
    throw ShapeError("guidance model expects " + std::to_string(num_keypoints_) + " warped masks, got " +
                     to_string(warped_masks.shape()));
  return net_.forward(attention_input(warped_masks, conf_masks, exemplar));
}

void GuidanceModel::collect(const std::string& prefix, nn::NamedTensors& out) const { net_.collect(prefix, out); }

Tensor attention_T(const GuidanceModel& model, const Tensor& warped_masks, const Tensor& conf_masks,
                   const Tensor& exemplar) {
  return ops::softmax(model.logits(warped_masks, conf_masks, exemplar), 1);
}

Tensor fuse_warpfields(const Tensor& attn, const Tensor& fields) {
  if (attn.rank() != 4 || fields.rank() != 5 || fields.dim(4) != 2 || fields.dim(0) != attn.dim(0) ||
      fields.dim(1) != attn.dim(1) || fields.dim(2) != attn.dim(2) || fields.dim(3) != attn.dim(3))
    throw ShapeError("cannot fuse fields " + to_string(fields.shape()) + " with weights " + to_string(attn.shape()));
  const int n = attn.dim(0), h = attn.dim(2), w = attn.dim(3);
  const Tensor planar = ops::permute(fields, {0, 1, 4, 2, 3});  // [N, K, 2, H, W]
  const Tensor fused = ops::convex_fusion(attn, planar);        // [N, 2, H, W]
  return ops::reshape(ops::permute(fused, {0, 2, 3, 1}), {n, h, w, 2});
}

PseudoGT pseudo_ground_truth(const Tensor& field, const Tensor& y_A, const Tensor& y_B) {
  if (field.rank() != 4 || y_A.rank() != 4 || y_B.rank() != 4 || field.dim(1) != y_A.dim(2) ||
      field.dim(2) != y_A.dim(3) || y_A.dim(2) != y_B.dim(2) || y_A.dim(3) != y_B.dim(3))
    throw ShapeError("pseudo ground truth: field " + to_string(field.shape()) + " vs exemplar " +
                     to_string(y_B.shape()));
  return {field, ops::grid_sample(y_A, field, Padding::Zeros), ops::grid_sample(y_B, field, Padding::Border)};
}

}  // namespace maskedit

#include "maskedit/pipeline.hpp"

#include "maskedit/errors.hpp"

namespace maskedit {

Pipeline Pipeline::create(const ModelConfig& config, std::uint64_t seed) {
  Pipeline p;
  p.config = config;
  p.correspondence = CorrespondenceModel(config.correspondence(), seed);
  p.transport = TransportModel(config.num_keypoints, config.attention, seed + 1);
  p.guidance = GuidanceModel(config.num_keypoints, config.attention, seed + 2);
  return p;
}

nn::NamedTensors Pipeline::segment(const std::string& name) const {
  nn::NamedTensors out;
  if (name == "correspondence")
    correspondence.collect(name, out);
  else if (name == "transport")
    transport.collect(name, out);
  else if (name == "guidance")
    guidance.collect(name, out);
  else
    throw NotFoundError("unknown model segment " + name);
  return out;
}

nn::NamedTensors Pipeline::parameters() const {
  nn::NamedTensors out;
  for (const char* name : kSegments) {
    auto part = segment(name);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

ForwardOutput forward(const Pipeline& p, const Tensor& x_A, const Tensor& y_A, const Tensor& y_B,
                      bool with_guidance) {
  ForwardOutput out;
  out.corr = correspond(p.correspondence, x_A, y_A, y_B);
  out.exemplar = masked_exemplar(y_A, y_B);
  out.confidence = confidence_masks(x_A, out.corr.warped_masks);
  out.attention_I = attention_I(p.transport, out.corr.warped_masks, out.confidence, out.exemplar);
  out.result = transport(out.attention_I, out.corr.warped_images, out.corr.warped_masks, y_B, y_A);
  if (with_guidance) {
    out.attention_T = attention_T(p.guidance, out.corr.warped_masks, out.confidence, out.exemplar);
    out.pseudo = pseudo_ground_truth(fuse_warpfields(out.attention_T, out.corr.fields), y_A, y_B);
  }
  return out;
}

Tensor cycle_pass(const Pipeline& p, const Tensor& y_A, const PseudoGT& pseudo, bool detach) {
  if (!pseudo.mask.defined() || !pseudo.image.defined()) throw Error("cycle pass needs a pseudo ground truth");
  const Tensor mask = detach ? pseudo.mask.detach() : pseudo.mask;
  const Tensor image = detach ? pseudo.image.detach() : pseudo.image;
  return forward(p, y_A, mask, image, false).result.image;
}

}  // namespace maskedit

#include "maskedit/inference.hpp"

#include <cmath>

#include "maskedit/checkpoint.hpp"
#include "maskedit/errors.hpp"
#include "maskedit/ops.hpp"

namespace maskedit {
namespace {

Tensor at_resolution(const Tensor& x, int h, int w) { return ops::resize_bilinear(x, h, w); }

std::vector<BinaryMask> planes(const Tensor& t) {
  // [1, C, H, W] -> C single-channel images
  std::vector<BinaryMask> out;
  const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
  const auto v = t.values();
  for (int k = 0; k < c; ++k) {
    BinaryMask m = Image::zeros(1, h, w);
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(k) * h * w, v.begin() + static_cast<std::ptrdiff_t>(k + 1) * h * w,
              m.data.begin());
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<std::array<double, 2>> points(const KeypointSet& kp) {
  std::vector<std::array<double, 2>> out;
  for (int k = 0; k < kp.count(); ++k) out.push_back({kp.positions.at({0, k, 0}), kp.positions.at({0, k, 1})});
  return out;
}

}  // namespace

std::shared_ptr<const ModelHandle> make_model_handle(Pipeline pipeline, const TrainConfig& config, std::int64_t step) {
  auto handle = std::make_shared<ModelHandle>();
  for (auto& [name, t] : pipeline.parameters()) {
    Tensor w = t;
    w.set_requires_grad(false);
  }
  handle->config = config;
  handle->pipeline = std::move(pipeline);
  handle->step = step;
  return handle;
}

std::shared_ptr<const ModelHandle> load_model(const std::filesystem::path& checkpoint) {
  TrainState state = load_checkpoint(checkpoint);
  auto handle = make_model_handle(std::move(state.pipeline), state.config, state.step);
  std::const_pointer_cast<ModelHandle>(handle)->source = checkpoint.string();
  return handle;
}

BinaryMask conform_mask(const Image& mask, int height, int width, std::vector<std::string>& warnings,
                        const char* what) {
  if (mask.channels != 1) throw ShapeError(std::string(what) + " must be a single-channel mask");
  Image m = mask;
  if (m.height != height || m.width != width) {
    const double ratio = static_cast<double>(m.width) / m.height, target = static_cast<double>(width) / height;
    if (std::abs(ratio - target) > 0.01 * target)
      throw ShapeError(std::string(what) + " is " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                       ", exemplar is " + std::to_string(width) + "x" + std::to_string(height));
    m = resize(m, height, width);
    warnings.push_back(std::string(what) + " resized to exemplar resolution");
  }
  if (!is_binary(m)) {
    warnings.push_back(std::string(what) + " was not binary and has been thresholded at 0.5");
    m = threshold(m);
  }
  return m;
}

ManipulationResult manipulate(const ModelHandle& model, const RGBImage& y_B, const BinaryMask& y_A_in,
                              const Image& x_A_in, const ManipulationOptions& options) {
  if (!options.refine.empty() && options.refine != "none")
    throw NotSupportedError("refinement \"" + options.refine + "\" is not supported by this build");
  if (y_B.channels != 3) throw ShapeError("exemplar must be an RGB image");
  const int h = y_B.height, w = y_B.width;
  if (options.resolution && ((*options.resolution)[0] != h || (*options.resolution)[1] != w))
    throw ShapeError("requested resolution " + std::to_string((*options.resolution)[0]) + "x" +
                     std::to_string((*options.resolution)[1]) + " differs from the exemplar's " + std::to_string(h) +
                     "x" + std::to_string(w));

  ManipulationResult result;
  const BinaryMask y_A = conform_mask(y_A_in, h, w, result.warnings, "exemplar mask");
  const BinaryMask x_A = conform_mask(x_A_in, h, w, result.warnings, "edited mask");

  NoGradGuard guard;
  const Pipeline& p = model.pipeline;
  const Tensor xa = x_A.to_tensor(), ya = y_A.to_tensor(), yb = y_B.to_tensor();
  const CorrespondenceOutput corr = correspond(p.correspondence, xa, ya, yb);
  const Tensor exemplar = masked_exemplar(ya, yb);
  const Tensor conf = confidence_masks(xa, corr.warped_masks);

  const int r = model.working_resolution();
  const bool native = (h == r && w == r);
  auto small = [&](const Tensor& t) { return native ? t : at_resolution(t, r, r); };
  auto full = [&](const Tensor& t) { return native ? t : at_resolution(t, h, w); };
  const Tensor wm_s = small(corr.warped_masks), conf_s = small(conf), ex_s = small(exemplar);
  // Bilinear resampling keeps each pixel's weights convex.
  const Tensor attn = full(attention_I(p.transport, wm_s, conf_s, ex_s));
  const TransportResult fused = transport(attn, corr.warped_images, corr.warped_masks, yb, ya);

  result.image = quantize8(Image::from_tensor(fused.image));
  result.mask = threshold(Image::from_tensor(fused.mask));
  if (options.diagnostics) {
    Diagnostics d;
    d.source_keypoints = points(corr.source);
    d.driver_keypoints = points(corr.driver);
    d.attention = planes(attn);
    d.warped_masks = planes(corr.warped_masks);
    d.guidance = planes(full(attention_T(p.guidance, wm_s, conf_s, ex_s)));
    result.diagnostics = std::move(d);
  }
  return result;
}

}  // namespace maskedit

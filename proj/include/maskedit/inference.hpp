#pragma once

// Checkpoint-backed manipulation at exemplar resolution.

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "maskedit/config.hpp"
#include "maskedit/image.hpp"
#include "maskedit/pipeline.hpp"

namespace maskedit {

struct ModelHandle {
  TrainConfig config;  // snapshot stored in the checkpoint
  Pipeline pipeline;   // frozen
  std::int64_t step = 0;
  std::string source;

  int num_keypoints() const { return pipeline.config.num_keypoints; }
  // Resolution the attention networks were trained at.
  int working_resolution() const { return config.resolution; }
};

// Loads all three segments and freezes their weights.
std::shared_ptr<const ModelHandle> load_model(const std::filesystem::path& checkpoint);
std::shared_ptr<const ModelHandle> make_model_handle(Pipeline pipeline, const TrainConfig& config,
                                                     std::int64_t step = 0);

struct ManipulationOptions {
  // When set, must equal the exemplar's [height, width].
  std::optional<std::array<int, 2>> resolution;
  bool diagnostics = false;
  // Reserved post-processor hook; any value other than "" or "none" is
  // rejected with NotSupportedError.
  std::string refine;
};

struct Diagnostics {
  std::vector<std::array<double, 2>> source_keypoints;  // from x_A, [-1, 1] coordinates
  std::vector<std::array<double, 2>> driver_keypoints;  // from y_A * y_B
  std::vector<BinaryMask> attention;                    // K+1 transport weights, background first
  std::vector<BinaryMask> warped_masks;                 // K candidates
  std::vector<BinaryMask> guidance;                     // K fusion weights
};

struct ManipulationResult {
  RGBImage image;  // 8-bit quantized x_B hat
  BinaryMask mask;  // thresholded x_A hat
  std::optional<Diagnostics> diagnostics;
  std::vector<std::string> warnings;
};

// Thresholds non-binary masks and resizes masks whose aspect ratio matches
// the target; anything else is a ShapeError.
BinaryMask conform_mask(const Image& mask, int height, int width, std::vector<std::string>& warnings,
                        const char* what);

// Correspondence and fusion run at the exemplar's resolution; the attention
// networks see their inputs at the working resolution and their weights are
// resized back.
ManipulationResult manipulate(const ModelHandle& model, const RGBImage& y_B, const BinaryMask& y_A,
                              const Image& x_A, const ManipulationOptions& options = {});

}  // namespace maskedit

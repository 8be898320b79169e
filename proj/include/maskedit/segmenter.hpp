#pragma once

// Semantic-free masks from a file or from an external promptable segmenter.
//
// Segmenter protocol: POST {endpoint}/segment with JSON
//   {"image": <base64 PNG>, "points": [[x, y, label], ...], "box": [x0, y0, x1, y1]}
// ("points" and "box" optional, pixel coordinates, label 1 = foreground) and
// expect 200 {"mask": <base64 PNG>}.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "maskedit/image.hpp"

namespace maskedit {

std::string base64_encode(std::span<const std::uint8_t> bytes);
// FormatError on malformed input.
std::vector<std::uint8_t> base64_decode(const std::string& text);

struct PromptPoint {
  double x = 0.0, y = 0.0;
  int label = 1;
};

struct MaskPrompt {
  std::vector<PromptPoint> points;
  std::optional<std::array<double, 4>> box;
};

struct MaskFile {
  std::filesystem::path path;
};

struct SegmenterEndpoint {
  std::string url;  // e.g. "http://127.0.0.1:9000" or "http://host/api"
  double timeout_seconds = 10.0;
};

using MaskBackend = std::variant<MaskFile, SegmenterEndpoint>;

struct ExtractedMask {
  BinaryMask mask;
  std::vector<std::string> warnings;
};

// Keeps the largest 8-connected foreground component (lowest label on ties).
BinaryMask largest_component(const BinaryMask& mask);

// File masks are thresholded and resized; segmenter masks are additionally
// reduced to their largest component.  An unreachable segmenter raises
// UnavailableError.
ExtractedMask extract_mask(const RGBImage& image, const MaskBackend& backend, const MaskPrompt& prompt = {});

}  // namespace maskedit

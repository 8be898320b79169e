#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "maskedit/tensor.hpp"

namespace maskedit {

// Planar (CHW) image with real-valued samples in [0, 1].  Masks are
// single-channel images holding {0, 1}.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  static Image zeros(int channels, int height, int width);
  static Image filled(int channels, int height, int width, double value);

  bool empty() const noexcept { return data.empty(); }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height) * width; }
  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  // [1, C, H, W]
  Tensor to_tensor() const;
  static Image from_tensor(const Tensor& t, int batch_index = 0);

  friend bool operator==(const Image&, const Image&) = default;
};

using BinaryMask = Image;
using RGBImage = Image;

// Values >= threshold become 1, the rest 0.
BinaryMask threshold(const Image& mask, double level = 0.5);
bool is_binary(const Image& mask);
std::size_t count_foreground(const BinaryMask& mask);

// Elementwise product of a single-channel mask with every channel of image.
Image apply_mask(const BinaryMask& mask, const Image& image);

// Area-averaging resize (bilinear when upsampling).
Image resize(const Image& image, int height, int width);

// 8-bit round trip used by file and wire formats.
Image quantize8(const Image& image);

// PNG/JPEG decoding.  Colour files decode to 3 channels; masks decode to one
// channel thresholded at 128 (0 = background, 255 = foreground).
Image load_image(const std::filesystem::path& path);
BinaryMask load_mask(const std::filesystem::path& path);
Image decode_image(std::span<const std::uint8_t> bytes);
BinaryMask decode_mask(std::span<const std::uint8_t> bytes);

// Masks are written as single-channel 0/255 PNG; 3-channel images as RGB PNG.
void save_png(const Image& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& image);

// Horizontal strip of equally sized tiles (grey tiles are replicated to RGB).
Image tile_row(const std::vector<Image>& tiles);

}  // namespace maskedit

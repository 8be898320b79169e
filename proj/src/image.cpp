#include "maskedit/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "maskedit/errors.hpp"

namespace maskedit {
namespace {

Image from_mat(const cv::Mat& mat) {
  cv::Mat m8;
  if (mat.depth() == CV_16U)
    mat.convertTo(m8, CV_8U, 1.0 / 257.0);
  else
    m8 = mat;
  Image out;
  out.height = m8.rows;
  out.width = m8.cols;
  if (m8.channels() == 1) {
    out.channels = 1;
    out.data.resize(out.plane_size());
    for (int y = 0; y < m8.rows; ++y)
      for (int x = 0; x < m8.cols; ++x) out.at(0, y, x) = m8.at<std::uint8_t>(y, x) / 255.0;
    return out;
  }
  cv::Mat rgb;
  if (m8.channels() == 4)
    cv::cvtColor(m8, rgb, cv::COLOR_BGRA2RGB);
  else
    cv::cvtColor(m8, rgb, cv::COLOR_BGR2RGB);
  out.channels = 3;
  out.data.resize(3 * out.plane_size());
  for (int y = 0; y < rgb.rows; ++y)
    for (int x = 0; x < rgb.cols; ++x) {
      const auto px = rgb.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = px[c] / 255.0;
    }
  return out;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

cv::Mat to_mat(const Image& image) {
  if (image.channels == 1) {
    cv::Mat m(image.height, image.width, CV_8UC1);
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) m.at<std::uint8_t>(y, x) = to_byte(image.at(0, y, x));
    return m;
  }
  if (image.channels != 3)
    throw ShapeError("PNG export supports 1 or 3 channels, got " + std::to_string(image.channels));
  cv::Mat m(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      m.at<cv::Vec3b>(y, x) = cv::Vec3b(to_byte(image.at(2, y, x)), to_byte(image.at(1, y, x)),
                                        to_byte(image.at(0, y, x)));
  return m;
}

BinaryMask mask_from_mat(const cv::Mat& mat) {
  cv::Mat grey;
  if (mat.channels() == 1)
    grey = mat;
  else if (mat.channels() == 4)
    cv::cvtColor(mat, grey, cv::COLOR_BGRA2GRAY);
  else
    cv::cvtColor(mat, grey, cv::COLOR_BGR2GRAY);
  if (grey.depth() == CV_16U) grey.convertTo(grey, CV_8U, 1.0 / 257.0);
  BinaryMask out = Image::zeros(1, grey.rows, grey.cols);
  for (int y = 0; y < grey.rows; ++y)
    for (int x = 0; x < grey.cols; ++x) out.at(0, y, x) = grey.at<std::uint8_t>(y, x) >= 128 ? 1.0 : 0.0;
  return out;
}

}  // namespace

Image Image::zeros(int channels, int height, int width) { return filled(channels, height, width, 0.0); }

Image Image::filled(int channels, int height, int width, double value) {
  if (channels < 1 || height < 1 || width < 1)
    throw DimensionError("image dimensions must be positive");
  Image img;
  img.channels = channels;
  img.height = height;
  img.width = width;
  img.data.assign(static_cast<std::size_t>(channels) * height * width, value);
  return img;
}

Tensor Image::to_tensor() const { return Tensor::from({1, channels, height, width}, data); }

Image Image::from_tensor(const Tensor& t, int batch_index) {
  if (t.rank() != 4) throw ShapeError("expected an NCHW tensor, got " + to_string(t.shape()));
  Image img;
  img.channels = t.dim(1);
  img.height = t.dim(2);
  img.width = t.dim(3);
  const std::size_t n = static_cast<std::size_t>(img.channels) * img.plane_size();
  if (batch_index < 0 || batch_index >= t.dim(0)) throw DimensionError("batch index out of range");
  const auto v = t.values();
  img.data.assign(v.begin() + static_cast<std::ptrdiff_t>(n * batch_index),
                  v.begin() + static_cast<std::ptrdiff_t>(n * (batch_index + 1)));
  return img;
}

BinaryMask threshold(const Image& mask, double level) {
  BinaryMask out = mask;
  for (double& v : out.data) v = v >= level ? 1.0 : 0.0;
  return out;
}

bool is_binary(const Image& mask) {
  return mask.channels == 1 &&
         std::all_of(mask.data.begin(), mask.data.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

std::size_t count_foreground(const BinaryMask& mask) {
  return static_cast<std::size_t>(std::count_if(mask.data.begin(), mask.data.end(), [](double v) { return v >= 0.5; }));
}

Image apply_mask(const BinaryMask& mask, const Image& image) {
  if (mask.channels != 1 || mask.height != image.height || mask.width != image.width)
    throw ShapeError("mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " does not match image " + std::to_string(image.height) + "x" +
                     std::to_string(image.width));
  Image out = image;
  const std::size_t hw = image.plane_size();
  for (int c = 0; c < image.channels; ++c)
    for (std::size_t p = 0; p < hw; ++p) out.data[c * hw + p] *= mask.data[p];
  return out;
}

Image resize(const Image& image, int height, int width) {
  if (height < 1 || width < 1) throw DimensionError("resize target must be positive");
  if (image.height == height && image.width == width) return image;
  Image out = Image::zeros(image.channels, height, width);
  const int interp = (height < image.height || width < image.width) ? cv::INTER_AREA : cv::INTER_LINEAR;
  for (int c = 0; c < image.channels; ++c) {
    cv::Mat src(image.height, image.width, CV_64FC1,
                const_cast<double*>(image.data.data() + c * image.plane_size()));
    cv::Mat dst(height, width, CV_64FC1, out.data.data() + c * out.plane_size());
    cv::resize(src, dst, cv::Size(width, height), 0, 0, interp);
  }
  return out;
}

Image quantize8(const Image& image) {
  Image out = image;
  for (double& v : out.data) v = to_byte(v) / 255.0;
  return out;
}

Image load_image(const std::filesystem::path& path) {
  const cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw FormatError("cannot decode image " + path.string());
  Image img = from_mat(mat);
  if (img.channels == 1) {
    Image rgb = Image::zeros(3, img.height, img.width);
    for (int c = 0; c < 3; ++c) std::copy(img.data.begin(), img.data.end(), rgb.data.begin() + c * img.plane_size());
    return rgb;
  }
  return img;
}

BinaryMask load_mask(const std::filesystem::path& path) {
  const cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw FormatError("cannot decode mask " + path.string());
  return mask_from_mat(mat);
}

Image decode_image(std::span<const std::uint8_t> bytes) {
  const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  const cv::Mat mat = cv::imdecode(buf, cv::IMREAD_COLOR);
  if (mat.empty()) throw FormatError("cannot decode image bytes");
  return from_mat(mat);
}

BinaryMask decode_mask(std::span<const std::uint8_t> bytes) {
  const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  const cv::Mat mat = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw FormatError("cannot decode mask bytes");
  return mask_from_mat(mat);
}

void save_png(const Image& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), to_mat(image))) throw FormatError("cannot write " + path.string());
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_mat(image), out)) throw FormatError("PNG encoding failed");
  return out;
}

Image tile_row(const std::vector<Image>& tiles) {
  if (tiles.empty()) throw ShapeError("tile_row needs at least one tile");
  const int h = tiles.front().height, w = tiles.front().width;
  Image out = Image::zeros(3, h, w * static_cast<int>(tiles.size()));
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const Image& tile = tiles[t];
    if (tile.height != h || tile.width != w) throw ShapeError("tile_row tiles differ in size");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out.at(c, y, static_cast<int>(t) * w + x) = tile.at(tile.channels == 1 ? 0 : c, y, x);
  }
  return out;
}

}  // namespace maskedit

#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskedit/image.hpp"

namespace maskedit::testing {

inline std::filesystem::path source_dir() { return MASKEDIT_SOURCE_DIR; }
inline std::filesystem::path metric_fixtures() { return source_dir() / "tests" / "fixtures" / "metrics"; }

struct MetricReference {
  std::string a, b;
  double ssim, psnr, lpips, style, color, texture;
};

// Values frozen by tools/reference_metrics.py (scikit-image and PyTorch).
inline std::vector<MetricReference> metric_references() {
  std::ifstream in(metric_fixtures() / "reference.json");
  const auto j = nlohmann::json::parse(in);
  std::vector<MetricReference> out;
  for (const auto& r : j.at("pairs"))
    out.push_back({r.at("a"), r.at("b"), r.at("ssim"), r.at("psnr"), r.at("lpips"), r.at("style"), r.at("color"),
                   r.at("texture")});
  return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("maskedit_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Image random_image(int c, int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Image img = Image::zeros(c, h, w);
  for (double& v : img.data) v = u(rng);
  return img;
}

inline BinaryMask random_blob(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.25, 0.75), r(0.15, 0.3);
  const double cy = u(rng) * h, cx = u(rng) * w, ry = r(rng) * h, rx = r(rng) * w;
  BinaryMask m = Image::zeros(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dy = (y - cy) / ry, dx = (x - cx) / rx;
      m.at(0, y, x) = dy * dy + dx * dx <= 1.0 ? 1.0 : 0.0;
    }
  return m;
}

}  // namespace maskedit::testing

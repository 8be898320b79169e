#include "maskedit/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace maskedit {

Sample make_synthetic_sample(int resolution, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double pi = std::numbers::pi;
  const int n = resolution;

  // Blob: radius modulated by a few low harmonics.
  const double cx = 0.3 * (u(rng) - 0.5), cy = 0.3 * (u(rng) - 0.5);
  const double r0 = 0.35 + 0.15 * u(rng);
  double amp[3], phase[3];
  for (int i = 0; i < 3; ++i) amp[i] = 0.12 * u(rng) / (i + 1), phase[i] = 2 * pi * u(rng);
  const double aspect = 0.75 + 0.5 * u(rng);

  double bg0[3], bg1[3], fg0[3], fg1[3];
  for (int c = 0; c < 3; ++c) {
    bg0[c] = 0.15 + 0.7 * u(rng);
    bg1[c] = 0.15 + 0.7 * u(rng);
    fg0[c] = 0.1 + 0.8 * u(rng);
    fg1[c] = 0.1 + 0.8 * u(rng);
  }
  const double bg_angle = 2 * pi * u(rng);
  const double stripe_angle = pi * u(rng);
  const double stripe_period = 0.35 + 0.3 * u(rng);  // in normalized units
  const double spot_x = cx + 0.4 * r0 * (u(rng) - 0.5), spot_y = cy + 0.4 * r0 * (u(rng) - 0.5);
  const double spot_r = 0.25 * r0;

  Sample s{Image::zeros(3, n, n), Image::zeros(1, n, n)};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = -1.0 + 2.0 * j / (n - 1), y = -1.0 + 2.0 * i / (n - 1);
      const double dx = (x - cx) / aspect, dy = y - cy;
      const double theta = std::atan2(dy, dx);
      double r = r0;
      for (int h = 0; h < 3; ++h) r += amp[h] * std::cos((h + 2) * theta + phase[h]);
      const bool inside = std::hypot(dx, dy) < r;
      s.mask.at(0, i, j) = inside ? 1.0 : 0.0;

      const double g = 0.5 + 0.5 * (std::cos(bg_angle) * x + std::sin(bg_angle) * y) * 0.7;
      const double t = std::cos(stripe_angle) * x + std::sin(stripe_angle) * y;
      const double stripe = 0.5 + 0.5 * std::sin(2 * pi * t / stripe_period);
      const bool spot = std::hypot(x - spot_x, y - spot_y) < spot_r;
      for (int c = 0; c < 3; ++c) {
        double v = inside ? fg0[c] + (fg1[c] - fg0[c]) * stripe : bg0[c] + (bg1[c] - bg0[c]) * g;
        if (inside && spot) v = 1.0 - v;
        s.image.at(c, i, j) = std::clamp(v, 0.0, 1.0);
      }
    }
  s.image = quantize8(s.image);
  return s;
}

std::vector<Sample> make_synthetic_dataset(int count, int resolution, std::uint64_t seed) {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(make_synthetic_sample(resolution, seed * 1000003ull + i));
  return out;
}

DatasetManifest write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%03zu.png", i);
    const std::string image = std::string("image_") + stem, mask = std::string("mask_") + stem;
    save_png(samples[i].image, dir / image);
    save_png(samples[i].mask, dir / mask);
    m.records.push_back({image, mask});
  }
  m.save(dir / "manifest.jsonl");
  return m;
}

}  // namespace maskedit

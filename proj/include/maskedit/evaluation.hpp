#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "maskedit/features.hpp"
#include "maskedit/image.hpp"

namespace maskedit {

struct RegionSpec {
  BinaryMask roi;  // edited region
  BinaryMask rou;  // complement
};

// Square structuring element of radius d (Chebyshev distance <= d).
BinaryMask dilate_mask(const BinaryMask& mask, int radius);

// roi = dilate_d(x_A xor y_A), rou = not roi.
RegionSpec derive_regions(const BinaryMask& x_A, const BinaryMask& y_A, int dilation = 3);

// Mean over feature layers of the squared difference of Gram matrices
// G = F F^T / (C * H * W), averaged over Gram entries.  With a region, both
// images are multiplied by it first.
double style_loss(const RGBImage& a, const RGBImage& b, const BinaryMask* region = nullptr,
                  const FeatureExtractor& phi = default_features());

// Single-scale SSIM: 11-tap Gaussian window (sigma 1.5), reflected borders,
// population statistics, K1 = 0.01, K2 = 0.03, data range 1, a 5-pixel
// border excluded, averaged over channels.
double ssim(const Image& a, const Image& b, const BinaryMask* region = nullptr);

inline constexpr double kPsnrCap = 100.0;
// Peak 1.0; identical inputs score kPsnrCap.
double psnr(const Image& a, const Image& b, const BinaryMask* region = nullptr);

class PerceptualBackend {
 public:
  virtual ~PerceptualBackend() = default;
  virtual double distance(const RGBImage& a, const RGBImage& b) const = 0;
  virtual std::string name() const = 0;
};

// Channel-normalized squared feature differences, spatially averaged and
// summed over the backbone layers (equal layer weights).
class FeatureLpips : public PerceptualBackend {
 public:
  explicit FeatureLpips(const FeatureExtractor& phi = default_features()) : phi_(&phi) {}
  double distance(const RGBImage& a, const RGBImage& b) const override;
  std::string name() const override { return "feature-lpips"; }

 private:
  const FeatureExtractor* phi_;
};

// nullopt when no backend is configured.
std::optional<double> lpips(const RGBImage& a, const RGBImage& b, const BinaryMask* region,
                            const PerceptualBackend* backend);

inline constexpr int kHistogramBins = 32;
// (color, texture): cosine similarity of per-channel 32-bin histograms and of
// relu1 activation mean+std per channel.
std::pair<double, double> color_texture_relevance(const RGBImage& a, const RGBImage& b,
                                                  const FeatureExtractor& phi = default_features());

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"style_roi", "style_whole", "ssim_rou", "psnr_rou",
                                              "lpips_rou", "color_rel",   "texture_rel"};
  return names;
}

struct ReportItem {
  std::string output;
  std::string style;
  std::map<std::string, std::optional<double>> values;
};

struct MetricReport {
  std::vector<ReportItem> items;
  // style tag (plus "All") -> metric -> mean; nullopt when unavailable.
  std::map<std::string, std::map<std::string, std::optional<double>>> groups;

  std::string to_csv() const;
  std::string to_json() const;
};

struct ReportEntry {
  std::string output, exemplar, x_A, y_A, style;
};

// Newline-delimited JSON {"output", "exemplar", "x_A", "y_A", "style"}.
std::vector<ReportEntry> load_report_manifest(const std::filesystem::path& path);

struct ReportOptions {
  int roi_dilation = 3;
  const PerceptualBackend* lpips_backend = nullptr;
  std::vector<std::string> metrics = metric_names();
};

ReportItem evaluate_item(const RGBImage& output, const RGBImage& exemplar, const BinaryMask& x_A,
                         const BinaryMask& y_A, const ReportOptions& options);
MetricReport run_report(const std::vector<ReportEntry>& entries, const ReportOptions& options);

}  // namespace maskedit

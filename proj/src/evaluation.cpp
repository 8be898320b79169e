#include "maskedit/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "maskedit/errors.hpp"
#include "maskedit/ops.hpp"

namespace maskedit {
namespace {

void require_same(const Image& a, const Image& b, const char* what) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width)
    throw ShapeError(std::string(what) + ": inputs differ in shape");
}

Image masked(const Image& img, const BinaryMask* region) {
  if (!region) return img;
  if (region->height != img.height || region->width != img.width) throw ShapeError("region does not match image");
  return apply_mask(*region, img);
}

// Half-sample symmetric reflection: d c b a | a b c d | d c b a.
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_taps(double sigma, int radius) {
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) s += w[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : w) v /= s;
  return w;
}

// Separable Gaussian filter of one plane, rows first then columns.
std::vector<double> gaussian_filter(const std::vector<double>& in, int h, int w, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size() / 2);
  std::vector<double> tmp(in.size()), out(in.size());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) s += taps[static_cast<std::size_t>(k + r)] * in[static_cast<std::size_t>(reflect(i + k, h)) * w + j];
      tmp[static_cast<std::size_t>(i) * w + j] = s;
    }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) s += taps[static_cast<std::size_t>(k + r)] * tmp[static_cast<std::size_t>(i) * w + reflect(j + k, w)];
      out[static_cast<std::size_t>(i) * w + j] = s;
    }
  return out;
}

std::vector<double> gram(const Tensor& f) {
  const int c = f.dim(1), p = f.dim(2) * f.dim(3);
  const auto v = f.values();
  std::vector<double> g(static_cast<std::size_t>(c) * c, 0.0);
  const double norm = 1.0 / (static_cast<double>(c) * p);
  for (int i = 0; i < c; ++i)
    for (int j = i; j < c; ++j) {
      double s = 0.0;
      for (int q = 0; q < p; ++q) s += v[static_cast<std::size_t>(i) * p + q] * v[static_cast<std::size_t>(j) * p + q];
      g[static_cast<std::size_t>(i) * c + j] = g[static_cast<std::size_t>(j) * c + i] = s * norm;
    }
  return g;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
  if (aa == 0.0 || bb == 0.0) return aa == bb ? 1.0 : 0.0;
  return ab / std::sqrt(aa * bb);
}

std::vector<double> histogram(const RGBImage& img) {
  std::vector<double> h(static_cast<std::size_t>(img.channels) * kHistogramBins, 0.0);
  for (int c = 0; c < img.channels; ++c)
    for (std::size_t p = 0; p < img.plane_size(); ++p) {
      const double v = std::clamp(img.data[c * img.plane_size() + p], 0.0, 1.0);
      const int bin = std::min(static_cast<int>(v * kHistogramBins), kHistogramBins - 1);
      h[static_cast<std::size_t>(c) * kHistogramBins + bin] += 1.0;
    }
  return h;
}

std::vector<double> activation_stats(const Tensor& f) {
  const int c = f.dim(1), p = f.dim(2) * f.dim(3);
  const auto v = f.values();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(2 * c));
  for (int i = 0; i < c; ++i) {
    double m = 0.0;
    for (int q = 0; q < p; ++q) m += v[static_cast<std::size_t>(i) * p + q];
    m /= p;
    double var = 0.0;
    for (int q = 0; q < p; ++q) {
      const double d = v[static_cast<std::size_t>(i) * p + q] - m;
      var += d * d;
    }
    out.push_back(m);
    out.push_back(std::sqrt(var / p));
  }
  return out;
}

}  // namespace

BinaryMask dilate_mask(const BinaryMask& mask, int radius) {
  if (radius < 0) throw DimensionError("dilation radius must be nonnegative");
  BinaryMask out = Image::zeros(1, mask.height, mask.width);
  for (int i = 0; i < mask.height; ++i)
    for (int j = 0; j < mask.width; ++j) {
      if (mask.at(0, i, j) < 0.5) continue;
      for (int y = std::max(0, i - radius); y <= std::min(mask.height - 1, i + radius); ++y)
        for (int x = std::max(0, j - radius); x <= std::min(mask.width - 1, j + radius); ++x) out.at(0, y, x) = 1.0;
    }
  return out;
}

RegionSpec derive_regions(const BinaryMask& x_A, const BinaryMask& y_A, int dilation) {
  require_same(x_A, y_A, "derive_regions");
  BinaryMask diff = Image::zeros(1, x_A.height, x_A.width);
  for (std::size_t p = 0; p < diff.data.size(); ++p) diff.data[p] = (x_A.data[p] >= 0.5) != (y_A.data[p] >= 0.5);
  RegionSpec r{dilate_mask(diff, dilation), {}};
  r.rou = r.roi;
  for (double& v : r.rou.data) v = 1.0 - v;
  return r;
}

double style_loss(const RGBImage& a, const RGBImage& b, const BinaryMask* region, const FeatureExtractor& phi) {
  require_same(a, b, "style_loss");
  NoGradGuard guard;
  const auto fa = phi.forward(masked(a, region).to_tensor());
  const auto fb = phi.forward(masked(b, region).to_tensor());
  double total = 0.0;
  for (const auto& name : FeatureExtractor::layer_names()) {
    const auto ga = gram(fa.at(name)), gb = gram(fb.at(name));
    double s = 0.0;
    for (std::size_t i = 0; i < ga.size(); ++i) s += (ga[i] - gb[i]) * (ga[i] - gb[i]);
    total += s / static_cast<double>(ga.size());
  }
  return total / static_cast<double>(FeatureExtractor::layer_names().size());
}

double ssim(const Image& a0, const Image& b0, const BinaryMask* region) {
  require_same(a0, b0, "ssim");
  const Image a = masked(a0, region), b = masked(b0, region);
  constexpr int kRadius = 5;
  if (a.height < 2 * kRadius + 1 || a.width < 2 * kRadius + 1) throw DimensionError("SSIM needs at least 11x11 images");
  const auto taps = gaussian_taps(1.5, kRadius);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int h = a.height, w = a.width;
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    const auto off = static_cast<std::ptrdiff_t>(c * a.plane_size());
    std::vector<double> x(a.data.begin() + off, a.data.begin() + off + static_cast<std::ptrdiff_t>(a.plane_size()));
    std::vector<double> y(b.data.begin() + off, b.data.begin() + off + static_cast<std::ptrdiff_t>(b.plane_size()));
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t p = 0; p < x.size(); ++p) xx[p] = x[p] * x[p], yy[p] = y[p] * y[p], xy[p] = x[p] * y[p];
    const auto ux = gaussian_filter(x, h, w, taps), uy = gaussian_filter(y, h, w, taps);
    const auto uxx = gaussian_filter(xx, h, w, taps), uyy = gaussian_filter(yy, h, w, taps);
    const auto uxy = gaussian_filter(xy, h, w, taps);
    double s = 0.0;
    int count = 0;
    for (int i = kRadius; i < h - kRadius; ++i)
      for (int j = kRadius; j < w - kRadius; ++j) {
        const std::size_t p = static_cast<std::size_t>(i) * w + j;
        const double vx = uxx[p] - ux[p] * ux[p], vy = uyy[p] - uy[p] * uy[p], cov = uxy[p] - ux[p] * uy[p];
        s += ((2 * ux[p] * uy[p] + c1) * (2 * cov + c2)) / ((ux[p] * ux[p] + uy[p] * uy[p] + c1) * (vx + vy + c2));
        ++count;
      }
    total += s / count;
  }
  return total / a.channels;
}

double psnr(const Image& a0, const Image& b0, const BinaryMask* region) {
  require_same(a0, b0, "psnr");
  const Image a = masked(a0, region), b = masked(b0, region);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) mse += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  mse /= static_cast<double>(a.data.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double FeatureLpips::distance(const RGBImage& a, const RGBImage& b) const {
  require_same(a, b, "lpips");
  NoGradGuard guard;
  const auto fa = phi_->forward(a.to_tensor()), fb = phi_->forward(b.to_tensor());
  double total = 0.0;
  for (const auto& name : FeatureExtractor::layer_names()) {
    const Tensor& ta = fa.at(name);
    const Tensor& tb = fb.at(name);
    const int c = ta.dim(1), p = ta.dim(2) * ta.dim(3);
    const auto va = ta.values(), vb = tb.values();
    double layer = 0.0;
    for (int q = 0; q < p; ++q) {
      double na = 0.0, nb = 0.0;
      for (int k = 0; k < c; ++k) {
        na += va[static_cast<std::size_t>(k) * p + q] * va[static_cast<std::size_t>(k) * p + q];
        nb += vb[static_cast<std::size_t>(k) * p + q] * vb[static_cast<std::size_t>(k) * p + q];
      }
      na = std::sqrt(na) + 1e-10, nb = std::sqrt(nb) + 1e-10;
      for (int k = 0; k < c; ++k) {
        const double d = va[static_cast<std::size_t>(k) * p + q] / na - vb[static_cast<std::size_t>(k) * p + q] / nb;
        layer += d * d;
      }
    }
    total += layer / p;
  }
  return total;
}

std::optional<double> lpips(const RGBImage& a, const RGBImage& b, const BinaryMask* region,
                            const PerceptualBackend* backend) {
  if (!backend) return std::nullopt;
  return backend->distance(masked(a, region), masked(b, region));
}

std::pair<double, double> color_texture_relevance(const RGBImage& a, const RGBImage& b, const FeatureExtractor& phi) {
  require_same(a, b, "color_texture_relevance");
  NoGradGuard guard;
  const double color = cosine(histogram(a), histogram(b));
  const Tensor fa = phi.forward(a.to_tensor(), {"relu1"}).at("relu1");
  const Tensor fb = phi.forward(b.to_tensor(), {"relu1"}).at("relu1");
  return {color, cosine(activation_stats(fa), activation_stats(fb))};
}

ReportItem evaluate_item(const RGBImage& output, const RGBImage& exemplar, const BinaryMask& x_A,
                         const BinaryMask& y_A, const ReportOptions& o) {
  const RegionSpec r = derive_regions(x_A, y_A, o.roi_dilation);
  ReportItem item;
  auto want = [&](const char* m) { return std::find(o.metrics.begin(), o.metrics.end(), m) != o.metrics.end(); };
  if (want("style_roi")) item.values["style_roi"] = style_loss(output, exemplar, &r.roi);
  if (want("style_whole")) item.values["style_whole"] = style_loss(output, exemplar);
  if (want("ssim_rou")) item.values["ssim_rou"] = ssim(output, exemplar, &r.rou);
  if (want("psnr_rou")) item.values["psnr_rou"] = psnr(output, exemplar, &r.rou);
  if (want("lpips_rou")) item.values["lpips_rou"] = lpips(output, exemplar, &r.rou, o.lpips_backend);
  if (want("color_rel") || want("texture_rel")) {
    const auto [color, texture] = color_texture_relevance(output, exemplar);
    if (want("color_rel")) item.values["color_rel"] = color;
    if (want("texture_rel")) item.values["texture_rel"] = texture;
  }
  return item;
}

std::vector<ReportEntry> load_report_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("report manifest " + path.string() + " not found");
  std::vector<ReportEntry> out;
  std::string line;
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    return std::filesystem::path(p).is_relative() ? (base / p).string() : p;
  };
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({resolve(j.at("output")), resolve(j.at("exemplar")), resolve(j.at("x_A")), resolve(j.at("y_A")),
                     j.value("style", std::string("All"))});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("report manifest: " + std::string(e.what()));
    }
  }
  return out;
}

MetricReport run_report(const std::vector<ReportEntry>& entries, const ReportOptions& options) {
  if (entries.empty()) throw FormatError("report manifest is empty");
  MetricReport report;
  for (const auto& e : entries) {
    const RGBImage out = load_image(e.output);
    const RGBImage ex = resize(load_image(e.exemplar), out.height, out.width);
    const BinaryMask xa = threshold(resize(load_mask(e.x_A), out.height, out.width));
    const BinaryMask ya = threshold(resize(load_mask(e.y_A), out.height, out.width));
    ReportItem item = evaluate_item(out, ex, xa, ya, options);
    item.output = e.output;
    item.style = e.style;
    report.items.push_back(std::move(item));
  }
  std::map<std::string, std::vector<const ReportItem*>> members;
  for (const auto& item : report.items) {
    members[item.style].push_back(&item);
    if (item.style != "All") members["All"].push_back(&item);
  }
  for (const auto& [group, items] : members)
    for (const auto& metric : options.metrics) {
      double s = 0.0;
      bool available = true;
      for (const ReportItem* it : items) {
        const auto& v = it->values.at(metric);
        if (!v) {
          available = false;
          break;
        }
        s += *v;
      }
      report.groups[group][metric] = available ? std::optional<double>(s / static_cast<double>(items.size())) : std::nullopt;
    }
  return report;
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  std::vector<std::string> metrics;
  if (!groups.empty())
    for (const auto& [m, v] : groups.begin()->second) metrics.push_back(m);
  out << "row,style";
  for (const auto& m : metrics) out << "," << m;
  out << "\n";
  auto cell = [&](const std::optional<double>& v) {
    if (v)
      out << "," << *v;
    else
      out << ",unavailable";
  };
  for (const auto& item : items) {
    out << item.output << "," << item.style;
    for (const auto& m : metrics) cell(item.values.count(m) ? item.values.at(m) : std::nullopt);
    out << "\n";
  }
  for (const auto& [group, values] : groups) {
    out << "mean," << group;
    for (const auto& m : metrics) cell(values.at(m));
    out << "\n";
  }
  return out.str();
}

std::string MetricReport::to_json() const {
  using nlohmann::json;
  auto conv = [](const std::map<std::string, std::optional<double>>& values) {
    json j = json::object();
    for (const auto& [k, v] : values) j[k] = v ? json(*v) : json("unavailable");
    return j;
  };
  json j{{"items", json::array()}, {"groups", json::object()}};
  for (const auto& item : items) j["items"].push_back({{"output", item.output}, {"style", item.style}, {"metrics", conv(item.values)}});
  for (const auto& [group, values] : groups) j["groups"][group] = conv(values);
  return j.dump(2);
}

}  // namespace maskedit

#include "maskedit/segmenter.hpp"

#include <openssl/evp.h>

#include <opencv2/imgproc.hpp>

#include "httplib.h"
#include "json.hpp"
#include "maskedit/errors.hpp"

namespace maskedit {

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::string s;
  s.reserve(text.size());
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
  if (s.size() % 4 != 0) throw FormatError("base64 payload length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * s.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(s.data()), static_cast<int>(s.size()));
  if (n < 0) throw FormatError("malformed base64 payload");
  std::size_t pad = 0;
  if (!s.empty() && s.back() == '=') ++pad;
  if (s.size() > 1 && s[s.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

BinaryMask largest_component(const BinaryMask& mask) {
  cv::Mat bin(mask.height, mask.width, CV_8U);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) bin.at<std::uint8_t>(y, x) = mask.at(0, y, x) >= 0.5 ? 1 : 0;
  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(bin, labels, stats, centroids, 8, CV_32S);
  BinaryMask out = Image::zeros(1, mask.height, mask.width);
  int best = 0, best_area = 0;
  for (int l = 1; l < n; ++l)
    if (stats.at<int>(l, cv::CC_STAT_AREA) > best_area) best = l, best_area = stats.at<int>(l, cv::CC_STAT_AREA);
  if (best == 0) return out;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) out.at(0, y, x) = labels.at<int>(y, x) == best ? 1.0 : 0.0;
  return out;
}

namespace {

ExtractedMask finish(BinaryMask m, const RGBImage& image, std::vector<std::string> warnings) {
  if (m.height != image.height || m.width != image.width) m = threshold(resize(m, image.height, image.width));
  if (count_foreground(m) == 0) warnings.push_back("mask is empty (no foreground pixels)");
  return {std::move(m), std::move(warnings)};
}

ExtractedMask from_file(const RGBImage& image, const MaskFile& file) {
  if (!std::filesystem::exists(file.path)) throw NotFoundError("mask file " + file.path.string() + " not found");
  return finish(load_mask(file.path), image, {});
}

ExtractedMask from_segmenter(const RGBImage& image, const SegmenterEndpoint& ep, const MaskPrompt& prompt) {
  const auto scheme = ep.url.find("://");
  const auto path_at = ep.url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  const std::string host = ep.url.substr(0, path_at);
  std::string base = path_at == std::string::npos ? "" : ep.url.substr(path_at);
  while (!base.empty() && base.back() == '/') base.pop_back();

  nlohmann::json body{{"image", base64_encode(encode_png(image))}};
  if (!prompt.points.empty()) {
    body["points"] = nlohmann::json::array();
    for (const auto& p : prompt.points) body["points"].push_back({p.x, p.y, p.label});
  }
  if (prompt.box) body["box"] = *prompt.box;

  httplib::Client client(host);
  const auto seconds = static_cast<time_t>(ep.timeout_seconds);
  const auto micros = static_cast<time_t>((ep.timeout_seconds - static_cast<double>(seconds)) * 1e6);
  client.set_connection_timeout(seconds, micros);
  client.set_read_timeout(seconds, micros);
  const auto res = client.Post(base + "/segment", body.dump(), "application/json");
  const std::string degraded = "; running in degraded mode, supply the mask as a PNG file instead";
  if (!res) throw UnavailableError("segmenter at " + ep.url + " is unreachable (" + httplib::to_string(res.error()) + ")" + degraded);
  if (res->status != 200)
    throw UnavailableError("segmenter at " + ep.url + " answered HTTP " + std::to_string(res->status) + degraded);
  BinaryMask m;
  try {
    const auto reply = nlohmann::json::parse(res->body);
    m = decode_mask(base64_decode(reply.at("mask").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("segmenter reply is malformed: ") + e.what());
  }
  if (m.height != image.height || m.width != image.width) m = threshold(resize(m, image.height, image.width));
  return finish(largest_component(m), image, {});
}

}  // namespace

ExtractedMask extract_mask(const RGBImage& image, const MaskBackend& backend, const MaskPrompt& prompt) {
  if (const auto* file = std::get_if<MaskFile>(&backend)) return from_file(image, *file);
  return from_segmenter(image, std::get<SegmenterEndpoint>(backend), prompt);
}

}  // namespace maskedit

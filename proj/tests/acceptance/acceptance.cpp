// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
//   acceptance [--only NAME]... [--work DIR] [--checkpoint PATH]
//
// The service criterion uses the checkpoint written by the training smoke
// run; pass --checkpoint to run it on its own.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"
#include "maskedit/checkpoint.hpp"
#include "maskedit/evaluation.hpp"
#include "maskedit/inference.hpp"
#include "maskedit/losses.hpp"
#include "maskedit/ops.hpp"
#include "maskedit/pipeline.hpp"
#include "maskedit/segmenter.hpp"
#include "maskedit/server.hpp"
#include "maskedit/synthetic.hpp"
#include "maskedit/training.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace maskedit;
using maskedit::testing::gradcheck;
using maskedit::testing::random_tensor;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a sub-check; the first failure is named in the detail line.
  void expect(bool ok, const std::string& what) {
    if (!ok && pass) detail << "[failed: " << what << "] ";
    pass = pass && ok;
  }
};

struct Context {
  fs::path work;
  std::optional<fs::path> checkpoint;  // set by the training run
  json thresholds;
};

double coord(int i, int n) { return -1.0 + 2.0 * i / (n - 1); }

double max_abs(const Tensor& t, double target) {
  double worst = 0.0;
  for (double v : t.values()) worst = std::max(worst, std::abs(v - target));
  return worst;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor random_attention(Shape shape, std::uint64_t seed) { return ops::softmax(random_tensor(shape, -4, 4, seed), 1); }

void perturb(const nn::NamedTensors& params, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (const auto& [name, t] : params) {
    Tensor handle = t;
    for (double& v : handle.mutable_values()) v += n(rng);
  }
}

// ---------------------------------------------------------------------------

void warp_oracle(Context&, Outcome& out) {
  const int n = 64;
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int a = 0; a < 100; ++a) {
    std::vector<double> theta(6);
    for (double& v : theta) v = u(rng);
    const Tensor field = dilate(Tensor::from({1, 1, 2, 3}, theta), n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double x = coord(j, n), y = coord(i, n);
        worst = std::max(worst, std::abs(field.at({0, 0, i, j, 0}) - (theta[0] * x + theta[1] * y + theta[2])));
        worst = std::max(worst, std::abs(field.at({0, 0, i, j, 1}) - (theta[3] * x + theta[4] * y + theta[5])));
      }
  }
  const double secs = seconds_since(t0);
  out.detail << "max abs diff " << worst << ", " << secs << " s";
  out.expect(worst < 1e-6, "max abs diff < 1e-6");
  out.expect(secs < 10.0, "runtime < 10 s");
}

void attention_normalization(Context&, Outcome& out) {
  // 80x128 = 10240 pixels (the hourglass wants sides divisible by 16),
  // random network weights and random inputs.
  const int k = 4, h = 80, w = 128;
  TransportModel tm(k, AttentionConfig{}, 11);
  GuidanceModel gm(k, AttentionConfig{}, 12);
  nn::NamedTensors params;
  tm.collect("t", params);
  gm.collect("g", params);
  perturb(params, 13, 0.5);
  NoGradGuard guard;
  const Tensor wm = random_tensor({1, k, h, w}, 0, 1, 14), conf = random_tensor({1, k, h, w}, -1, 1, 15);
  const Tensor ex = random_tensor({1, 3, h, w}, 0, 1, 16);
  const Tensor aI = attention_I(tm, wm, conf, ex), aT = attention_T(gm, wm, conf, ex);
  const double eI = max_abs(ops::sum(aI, 1), 1.0), eT = max_abs(ops::sum(aT, 1), 1.0);
  // Plain softmax over random logits as well.
  const double eS = max_abs(ops::sum(random_attention({1, k + 1, h, w}, 17), 1), 1.0);
  out.detail << h * w << " px; m^I (" << aI.dim(1) << " ch) " << eI << ", m^T (" << aT.dim(1) << " ch) " << eT
             << ", softmax " << eS;
  out.expect(aI.dim(1) == k + 1 && aT.dim(1) == k, "channel counts");
  out.expect(eI <= 1e-5 && eT <= 1e-5 && eS <= 1e-5, "sums within 1e-5");
}

void transport_convexity(Context&, Outcome& out) {
  const int k = 4, h = 16, w = 16;
  double worst = 0.0;
  for (int f = 0; f < 50; ++f) {
    const Tensor attn = random_attention({1, k + 1, h, w}, 1000 + f);
    const Tensor wi = random_tensor({1, k, 3, h, w}, 0, 1, 2000 + f), wm = random_tensor({1, k, h, w}, 0, 1, 3000 + f);
    const Tensor yb = random_tensor({1, 3, h, w}, 0, 1, 4000 + f), ya = random_tensor({1, 1, h, w}, 0, 1, 5000 + f);
    const TransportResult r = transport(attn, wi, wm, yb, ya);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        for (int c = 0; c < 3; ++c) {
          double lo = yb.at({0, c, i, j}), hi = lo;
          for (int kk = 0; kk < k; ++kk) {
            lo = std::min(lo, wi.at({0, kk, c, i, j}));
            hi = std::max(hi, wi.at({0, kk, c, i, j}));
          }
          const double v = r.image.at({0, c, i, j});
          worst = std::max({worst, lo - v, v - hi});
        }
        double lo = ya.at({0, 0, i, j}), hi = lo;
        for (int kk = 0; kk < k; ++kk) {
          lo = std::min(lo, wm.at({0, kk, i, j}));
          hi = std::max(hi, wm.at({0, kk, i, j}));
        }
        const double v = r.mask.at({0, 0, i, j});
        worst = std::max({worst, lo - v, v - hi});
      }
  }
  out.detail << "largest excursion outside [min, max] " << std::max(worst, 0.0) << " over 50 fixtures";
  out.expect(worst <= 1e-6, "inside candidate hull");
}

void identity_chain(Context& ctx, Outcome& out) {
  // Equal keypoints.
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  std::vector<double> pos(8), jac(16);
  for (double& v : pos) v = u(rng);
  for (double& v : jac) v = u(rng);
  for (int k = 0; k < 4; ++k) jac[static_cast<std::size_t>(4 * k)] += 1.5, jac[static_cast<std::size_t>(4 * k + 3)] += 1.5;
  KeypointSet kp;
  kp.positions = Tensor::from({1, 4, 2}, pos);
  kp.jacobians = Tensor::from({1, 4, 2, 2}, jac);
  const Tensor fields = dilate(local_affines(kp, kp).theta, 64, 64);
  double field_err = 0.0;
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < 64; ++i)
      for (int j = 0; j < 64; ++j) {
        field_err = std::max(field_err, std::abs(fields.at({0, k, i, j, 0}) - coord(j, 64)));
        field_err = std::max(field_err, std::abs(fields.at({0, k, i, j, 1}) - coord(i, 64)));
      }
  out.detail << "fields " << field_err;
  out.expect(field_err < 1e-6, "identity warp fields");

  // All attention on the background candidate.
  std::vector<double> a(5 * 64 * 64, 0.0);
  std::fill(a.begin(), a.begin() + 64 * 64, 1.0);
  const Tensor yb = random_tensor({1, 3, 64, 64}, 0, 1, 22), ya = random_tensor({1, 1, 64, 64}, 0, 1, 23);
  const TransportResult r = transport(Tensor::from({1, 5, 64, 64}, a), random_tensor({1, 4, 3, 64, 64}, 0, 1, 24),
                                      random_tensor({1, 4, 64, 64}, 0, 1, 25), yb, ya);
  const bool exact = std::equal(r.image.values().begin(), r.image.values().end(), yb.values().begin());
  out.detail << ", background passthrough " << (exact ? "exact" : "inexact");
  out.expect(exact, "x_B = y_B exactly");

  // Identity TPS.
  TrainConfig desk = TrainConfig::desk_scale();
  const Pipeline p = Pipeline::create(desk.model, 26);
  perturb(p.segment("correspondence"), 27, 0.05);
  const auto data = make_synthetic_dataset(2, 64, ctx.thresholds["dataset"]["seed"].get<std::uint64_t>());
  const Tensor img = ops::concat({data[0].image.to_tensor(), data[1].image.to_tensor()}, 0);
  const double eq = equivariance_loss(p.correspondence, img, {geometry::zero_tps(5), geometry::zero_tps(5)}).item();
  out.detail << ", L_eq " << eq;
  out.expect(eq < 1e-6, "L_eq for identity TPS");

  // Identical images: the six evaluation fixtures.
  const FeatureLpips backend;
  double cx = 0.0, perc = 0.0, style = 0.0, lp = 0.0, s_min = 1.0;
  for (const auto& ref : testing::metric_references()) {
    const RGBImage img = load_image(testing::metric_fixtures() / ref.a);
    const Tensor t = img.to_tensor();
    cx = std::max(cx, contextual_loss(t, t, ContextualConfig{}, default_features()).item());
    perc = std::max(perc, perceptual_loss(t, t, default_features()).item());
    style = std::max(style, style_loss(img, img));
    lp = std::max(lp, *lpips(img, img, nullptr, &backend));
    s_min = std::min(s_min, ssim(img, img));
  }
  out.detail << ", worst over 6 fixtures: context " << cx << ", perc " << perc << ", style " << style << ", lpips " << lp
             << ", ssim " << s_min;
  out.expect(cx < 1e-4 && perc < 1e-4 && style < 1e-4 && lp < 1e-4, "identical-image losses");
  out.expect(s_min == 1.0, "SSIM = 1");
  // Smooth synthetic images keep near-parallel relu2 features, which split
  // the contextual affinity between neighbours; reported, not gated.
  const Tensor smooth = data[0].image.to_tensor();
  out.detail << " (context on a smooth synthetic image " << contextual_loss(smooth, smooth, ContextualConfig{}, default_features()).item()
             << ")";
}

// Pixels of m within Chebyshev distance d of a background pixel, the frame
// exterior counting as background.
std::set<std::pair<int, int>> boundary_set(const BinaryMask& m, int d) {
  std::set<std::pair<int, int>> out;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (m.at(0, y, x) < 0.5) continue;
      bool near = false;
      for (int dy = -d; dy <= d && !near; ++dy)
        for (int dx = -d; dx <= d && !near; ++dx) {
          const int qy = y + dy, qx = x + dx;
          near = qy < 0 || qx < 0 || qy >= m.height || qx >= m.width || m.at(0, qy, qx) < 0.5;
        }
      if (near) out.insert({y, x});
    }
  return out;
}

BinaryMask random_shape(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(3.0, 12.0), r(2.0, 7.0), jitter(-0.4, 0.4);
  for (;;) {
    const double cy = c(rng), cx = c(rng), ry = r(rng), rx = r(rng);
    BinaryMask m = Image::zeros(1, 16, 16);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const double q = std::pow((y - cy) / ry, 2) + std::pow((x - cx) / rx, 2);
        // Soft mask; thresholded below.
        m.at(0, y, x) = std::clamp(1.5 - q + jitter(rng), 0.0, 1.0);
      }
    if (count_foreground(threshold(m)) > 0) return m;
  }
}

void boundary_iou_oracle(Context&, Outcome& out) {
  std::mt19937_64 rng(31);
  const int d = 2;
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const BinaryMask a = threshold(random_shape(rng)), b = threshold(random_shape(rng));
    const double loss = boundary_iou_loss(a.to_tensor(), b.to_tensor(), d).item();
    const auto ba = boundary_set(a, d), bb = boundary_set(b, d);
    std::size_t inter = 0;
    for (const auto& p : ba) inter += bb.count(p);
    const std::size_t uni = ba.size() + bb.size() - inter;
    const double oracle = 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
    worst = std::max(worst, std::abs(loss - oracle));
  }
  out.detail << "max |loss - (1 - BIoU)| " << worst << " over 200 pairs, d=2";
  out.expect(worst <= 0.02, "within 0.02");
}

void gradient_checks(Context&, Outcome& out) {
  auto report = [&](const std::string& name, double err) {
    out.detail << name << " " << err << "; ";
    out.expect(err < 1e-3, name);
  };
  {
    // Image sampled through a dilated affine field.  Generic values: no sample
    // lands on a bilinear cell edge or the border clamp, where the warp is not
    // differentiable.
    const Tensor theta = Tensor::parameter({1, 2, 2, 3}, {0.913, 0.137, 0.0419, -0.0883, 0.871, -0.0627, 0.8561, -0.1931, 0.0713, 0.1179, 0.8437, 0.0291});
    const Tensor image = random_tensor({1, 3, 8, 8}, 0, 1, 41, true);
    const Tensor w = random_tensor({1, 2, 3, 8, 8}, -1, 1, 42);
    auto loss = [&] { return ops::sum(warp_candidates(image, dilate(theta, 8, 8), Padding::Border) * w); };
    report("sample-through-warp/theta", gradcheck(loss, theta).relative_error);
    report("sample-through-warp/image", gradcheck(loss, image).relative_error);
  }
  {
    const Tensor f = random_tensor({1, 8, 8, 8}, -1, 1, 43, true), t = random_tensor({1, 8, 8, 8}, -1, 1, 44);
    report("contextual", gradcheck([&] { return contextual_similarity_loss(f, t, 0.5, 1e-5); }, f).relative_error);
  }
  {
    const Tensor wm = random_tensor({1, 4, 8, 8}, 0.05, 0.95, 45, true), x = random_tensor({1, 1, 8, 8}, 0.05, 0.95, 46, true);
    auto loss = [&] { return boundary_iou_loss(wm, x, 2); };
    report("boundary-iou/warped", gradcheck(loss, wm).relative_error);
    report("boundary-iou/x_A", gradcheck(loss, x).relative_error);
  }
  {
    const int k = 4;
    const Tensor logits = random_tensor({1, k + 1, 8, 8}, -2, 2, 47, true);
    const Tensor wi = random_tensor({1, k, 3, 8, 8}, 0, 1, 48, true), wm = random_tensor({1, k, 8, 8}, 0, 1, 49, true);
    const Tensor yb = random_tensor({1, 3, 8, 8}, 0, 1, 50, true), ya = random_tensor({1, 1, 8, 8}, 0, 1, 51, true);
    const Tensor w = random_tensor({1, 3, 8, 8}, -1, 1, 52);
    auto loss = [&] {
      const TransportResult r = transport(ops::softmax(logits, 1), wi, wm, yb, ya);
      return ops::sum(r.image * w) + ops::sum(ops::square(r.mask));
    };
    double err = 0.0;
    for (const Tensor& p : {logits, wi, wm, yb, ya}) err = std::max(err, gradcheck(loss, p).relative_error);
    report("transport", err);
  }
}

void training_smoke(Context& ctx, Outcome& out) {
  const json& th = ctx.thresholds;
  TrainConfig config = TrainConfig::desk_scale();
  config.steps = th["steps"];
  const auto& ds = th["dataset"];
  const auto data = make_synthetic_dataset(ds["count"], ds["resolution"], ds["seed"].get<std::uint64_t>());
  TrainLoopOptions options;
  options.out_dir = ctx.work / "train";
  fs::remove_all(options.out_dir);
  options.on_step = [](const StepReport& r) {
    if (r.step % 100 == 0) {
      std::fprintf(stderr, "  step %lld total %.4f\n", static_cast<long long>(r.step), r.breakdown.at("total"));
      std::fflush(stderr);
    }
  };
  const auto t0 = std::chrono::steady_clock::now();
  const TrainLoopResult result = train_loop(config, data, options);
  const double minutes = seconds_since(t0) / 60.0;
  ctx.checkpoint = result.checkpoint;

  const int window = th["loss_window"];
  const auto& h = result.history;
  double first = 0.0, last = 0.0;
  for (int i = 0; i < window; ++i) {
    first += h[static_cast<std::size_t>(i)].breakdown.at("total") / window;
    last += h[h.size() - 1 - static_cast<std::size_t>(i)].breakdown.at("total") / window;
  }
  const double drop = 1.0 - last / first;

  const auto model = load_model(result.checkpoint);
  const int probe = th["probe_image"];
  const Sample& s = data[static_cast<std::size_t>(probe)];
  const ManipulationResult edit = manipulate(*model, s.image, s.mask, s.mask);
  const double p = psnr(edit.image, s.image), q = ssim(edit.image, s.image);
  double mean_p = 0.0, mean_q = 0.0;
  for (const Sample& other : data) {
    const RGBImage img = manipulate(*model, other.image, other.mask, other.mask).image;
    mean_p += psnr(img, other.image) / static_cast<double>(data.size());
    mean_q += ssim(img, other.image) / static_cast<double>(data.size());
  }
  out.detail << h.size() << " steps in " << minutes << " min; loss " << first << " -> " << last << " (drop "
             << 100.0 * drop << "%); probe image " << probe << " PSNR " << p << " dB SSIM " << q
             << " (all 20: PSNR " << mean_p << ", SSIM " << mean_q << ")";
  out.expect(static_cast<int>(h.size()) == config.steps, "step count");
  out.expect(minutes < th["max_minutes"].get<double>(), "wall time");
  out.expect(drop >= th["min_loss_drop"].get<double>(), "loss drop");
  out.expect(p >= th["min_probe_psnr"].get<double>(), "probe PSNR");
  out.expect(q >= th["min_probe_ssim"].get<double>(), "probe SSIM");
}

void determinism(Context& ctx, Outcome& out) {
  TrainConfig config = TrainConfig::desk_scale();
  config.checkpoint_every = 0;
  config.snapshot_every = 0;
  const auto data = make_synthetic_dataset(20, 64, 7);
  TrainState a = TrainState::create(config), b = TrainState::create(config);
  for (int i = 0; i < 2; ++i) {
    train_step(a, next_batch(a, data));
    train_step(b, next_batch(b, data));
  }
  const auto bytes = serialize_checkpoint(a);
  out.expect(bytes == serialize_checkpoint(b), "2-step bitwise reproducibility");
  out.expect(serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes, "save-load-save");

  const fs::path dir = ctx.work / "resume";
  fs::remove_all(dir);
  TrainLoopOptions straight;
  straight.out_dir = dir / "straight";
  straight.steps = 4;
  const auto full = train_loop(config, data, straight);
  TrainLoopOptions split;
  split.out_dir = dir / "split";
  split.steps = 2;
  train_loop(config, data, split);
  split.steps = 4;
  split.resume = dir / "split" / "checkpoint_latest.bin";
  const auto resumed = train_loop(config, data, split);
  auto read = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  out.expect(read(full.checkpoint) == read(resumed.checkpoint), "resume matches uninterrupted");
  out.expect(full.history.back().breakdown == resumed.history.back().breakdown, "resumed loss breakdown");
  out.detail << "2-step runs, save/load/save and 2+2 vs 4 resumed checkpoints compared bytewise ("
             << bytes.size() << " bytes)";
}

void evaluation_cross_check(Context&, Outcome& out) {
  const FeatureLpips backend;
  double worst = 0.0;
  for (const auto& r : testing::metric_references()) {
    const RGBImage a = load_image(testing::metric_fixtures() / r.a), b = load_image(testing::metric_fixtures() / r.b);
    worst = std::max({worst, std::abs(ssim(a, b) - r.ssim), std::abs(psnr(a, b) - r.psnr),
                      std::abs(*lpips(a, b, nullptr, &backend) - r.lpips)});
  }
  const RGBImage base = testing::random_image(3, 64, 64, 61, 0.2, 0.8);
  RGBImage shifted = base;
  for (double& v : shifted.data) v += 0.1;
  const double closed = std::abs(psnr(base, shifted) - 20.0);
  out.detail << "max diff vs references " << worst << " on 6 pairs; offset-0.1 PSNR error " << closed;
  out.expect(worst < 1e-4, "reference agreement");
  out.expect(closed < 1e-9, "PSNR closed form");
}

std::string as_string(const Bytes& b) { return {b.begin(), b.end()}; }

void service_integration(Context& ctx, Outcome& out) {
  if (!ctx.checkpoint) {
    out.expect(false, "no trained checkpoint (training criterion not run and --checkpoint not given)");
    return;
  }
  const auto model = load_model(*ctx.checkpoint);
  ServerConfig cfg;
  cfg.port = 0;
  Server server(model, cfg);
  server.start();
  const auto data = make_synthetic_dataset(20, 64, 7);

  // Single round trip on a non-square exemplar.
  {
    httplib::Client client("127.0.0.1", server.port());
    client.set_read_timeout(120);
    const RGBImage exemplar = resize(data[3].image, 48, 80);
    const BinaryMask y_A = threshold(resize(data[3].mask, 48, 80));
    const BinaryMask x_A = threshold(resize(synthesize_pair(data[3].mask, geometry::TpsConfig{}, 5).x_A, 48, 80));
    auto created = client.Post("/sessions", httplib::MultipartFormDataItems{
                                                {"exemplar", as_string(encode_png(exemplar)), "y.png", "image/png"}});
    out.expect(created && created->status == 201, "create session");
    if (!out.pass) return server.stop();
    const std::string id = json::parse(created->body).at("id");
    auto masked = client.Post("/sessions/" + id + "/mask", httplib::MultipartFormDataItems{
                                                               {"mask", as_string(encode_png(y_A)), "m.png", "image/png"}});
    out.expect(masked && masked->status == 200, "mask upload");
    auto edited = client.Post("/sessions/" + id + "/manipulate",
                              httplib::MultipartFormDataItems{{"mask", as_string(encode_png(x_A)), "x.png", "image/png"}});
    out.expect(edited && edited->status == 200, "manipulate");
    if (!out.pass) return server.stop();
    const Image png = decode_image(base64_decode(json::parse(edited->body).at("image").get<std::string>()));
    out.expect(png.height == 48 && png.width == 80 && png.channels == 3, "decodable PNG at exemplar resolution");
    out.detail << "round trip " << png.width << "x" << png.height << " PNG; ";
  }

  // Eight concurrent sessions, each editing its own exemplar three times and
  // undoing once.  Every session's final state must equal the same chain
  // computed directly, and its history must hold only its own entries.
  const int sessions = 8, edits = 3;
  std::vector<std::string> failures(sessions);
  std::vector<std::thread> workers;
  for (int s = 0; s < sessions; ++s)
    workers.emplace_back([&, s] {
      try {
        httplib::Client client("127.0.0.1", server.port());
        client.set_read_timeout(300);
        const Sample& sample = data[static_cast<std::size_t>(s)];
        auto created = client.Post("/sessions", httplib::MultipartFormDataItems{
            {"exemplar", as_string(encode_png(sample.image)), "y.png", "image/png"},
            {"mask", as_string(encode_png(sample.mask)), "m.png", "image/png"}});
        if (!created || created->status != 201) throw std::runtime_error("create failed");
        const std::string id = json::parse(created->body).at("id");
        RGBImage expect = quantize8(sample.image);
        BinaryMask mask = sample.mask;
        std::vector<RGBImage> chain{expect};
        for (int e = 0; e < edits; ++e) {
          const BinaryMask x_A = synthesize_pair(sample.mask, geometry::TpsConfig{}, 100 * s + e).x_A;
          auto r = client.Post("/sessions/" + id + "/manipulate", as_string(encode_png(x_A)), "image/png");
          if (!r || r->status != 200) throw std::runtime_error("manipulate failed");
          expect = decode_image(encode_png(manipulate(*model, expect, mask, x_A).image));
          mask = x_A;
          chain.push_back(expect);
          if (decode_image(base64_decode(json::parse(r->body).at("image").get<std::string>())) != expect)
            throw std::runtime_error("edit " + std::to_string(e) + " differs from the direct chain");
        }
        auto undo = client.Post("/sessions/" + id + "/undo", "", "application/json");
        if (!undo || undo->status != 200) throw std::runtime_error("undo failed");
        auto got = client.Get("/sessions/" + id);
        const json body = json::parse(got->body);
        if (body.at("history").size() != edits + 1) throw std::runtime_error("history length");
        if (decode_image(base64_decode(body.at("exemplar").get<std::string>())) != chain[edits - 1])
          throw std::runtime_error("state after undo");
      } catch (const std::exception& e) {
        failures[static_cast<std::size_t>(s)] = e.what();
      }
    });
  for (auto& t : workers) t.join();
  server.stop();
  int bad = 0;
  for (int s = 0; s < sessions; ++s)
    if (!failures[static_cast<std::size_t>(s)].empty()) {
      ++bad;
      out.detail << "session " << s << ": " << failures[static_cast<std::size_t>(s)] << "; ";
    }
  out.detail << sessions << " concurrent sessions x " << edits << " edits + undo, " << bad << " with cross-talk or errors";
  out.expect(bad == 0, "isolation");
}

struct Criterion {
  const char* name;
  std::function<void(Context&, Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"maskedit acceptance suite"};
  std::vector<std::string> only;
  fs::path work = fs::temp_directory_path() / "maskedit_acceptance";
  std::optional<std::string> checkpoint;
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--work", work, "scratch directory");
  app.add_option("--checkpoint", checkpoint, "trained checkpoint for the service criterion");
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.work = work;
  fs::create_directories(work);
  if (checkpoint) ctx.checkpoint = *checkpoint;
  std::ifstream th(testing::source_dir() / "tests" / "fixtures" / "acceptance" / "thresholds.json");
  ctx.thresholds = json::parse(th);

  const std::vector<Criterion> criteria{
      {"warp-field-oracle", warp_oracle},
      {"attention-normalization", attention_normalization},
      {"transport-convexity", transport_convexity},
      {"identity-chain", identity_chain},
      {"boundary-iou-oracle", boundary_iou_oracle},
      {"gradient-checks", gradient_checks},
      {"training-smoke", training_smoke},
      {"determinism-persistence", determinism},
      {"evaluation-cross-check", evaluation_cross_check},
      {"service-integration", service_integration},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    Outcome out;
    try {
      c.run(ctx, out);
    } catch (const std::exception& e) {
      out.expect(false, std::string("exception: ") + e.what());
    }
    std::printf("%s %s: %s\n", out.pass ? "PASS" : "FAIL", c.name, out.detail.str().c_str());
    std::fflush(stdout);
    failed += out.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}

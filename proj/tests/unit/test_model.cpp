#include <cmath>
#include <random>

#include "doctest.h"
#include "maskedit/errors.hpp"
#include "maskedit/losses.hpp"
#include "maskedit/ops.hpp"
#include "maskedit/pipeline.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace maskedit;
using maskedit::testing::gradcheck;
using maskedit::testing::random_tensor;

namespace {

void perturb(const nn::NamedTensors& params, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (const auto& [name, t] : params) {
    Tensor handle = t;
    for (double& v : handle.mutable_values()) v += n(rng);
  }
}

double coord(int i, int n) { return -1.0 + 2.0 * i / (n - 1); }

// Keypoint set built from explicit positions/Jacobians.
KeypointSet keypoints(std::vector<double> pos, std::vector<double> jac, bool grad = false) {
  const int k = static_cast<int>(pos.size() / 2);
  KeypointSet s;
  s.positions = grad ? Tensor::parameter({1, k, 2}, std::move(pos)) : Tensor::from({1, k, 2}, std::move(pos));
  s.jacobians = grad ? Tensor::parameter({1, k, 2, 2}, std::move(jac)) : Tensor::from({1, k, 2, 2}, std::move(jac));
  return s;
}

Tensor softmax_random(Shape shape, std::uint64_t seed) { return ops::softmax(random_tensor(shape, -3, 3, seed), 1); }

ModelConfig small_model(int k) {
  ModelConfig m;
  m.num_keypoints = k;
  m.heatmap_size = 32;
  m.predictor_blocks = 3;
  m.attention.num_blocks = 3;
  return m;
}

}  // namespace

TEST_CASE("softargmax keypoints land on a sharp peak") {
  const int k = 2, h = 9, w = 11;
  std::vector<double> logits(static_cast<std::size_t>(k * h * w), 0.0);
  logits[static_cast<std::size_t>(0 * h * w + 2 * w + 7)] = 50.0;
  logits[static_cast<std::size_t>(1 * h * w + 6 * w + 1)] = 50.0;
  std::vector<double> jac(static_cast<std::size_t>(4 * k * h * w));
  const double j0[4] = {1.5, 0.2, -0.3, 0.7};
  for (int c = 0; c < 4 * k; ++c)
    for (int p = 0; p < h * w; ++p) jac[static_cast<std::size_t>(c * h * w + p)] = j0[c % 4];
  const KeypointSet kp = keypoints_from_maps(Tensor::from({1, k, h, w}, logits), Tensor::from({1, 4 * k, h, w}, jac), 0.1);
  CHECK(kp.positions.at({0, 0, 0}) == doctest::Approx(coord(7, w)).epsilon(1e-9));
  CHECK(kp.positions.at({0, 0, 1}) == doctest::Approx(coord(2, h)).epsilon(1e-9));
  CHECK(kp.positions.at({0, 1, 0}) == doctest::Approx(coord(1, w)).epsilon(1e-9));
  CHECK(kp.positions.at({0, 1, 1}) == doctest::Approx(coord(6, h)).epsilon(1e-9));
  for (int i = 0; i < 4; ++i) CHECK(kp.jacobians.at({0, 1, i / 2, i % 2}) == doctest::Approx(j0[i]).epsilon(1e-12));
  for (int kk = 0; kk < k; ++kk) {
    double s = 0.0;
    for (int p = 0; p < h * w; ++p) s += kp.heatmaps.values()[static_cast<std::size_t>(kk * h * w + p)];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("local affines follow L = J_drv inv(J_src), t = p_drv - L p_src") {
  const KeypointSet src = keypoints({0.1, -0.2, 0.5, 0.4}, {1.2, 0.1, -0.2, 0.9, 1.0, 0.0, 0.0, 1.0});
  const KeypointSet drv = keypoints({-0.3, 0.25, 0.0, 0.1}, {0.8, -0.3, 0.4, 1.1, 2.0, 0.5, 0.0, 0.5});
  const LocalAffines la = local_affines(src, drv);
  for (int k = 0; k < 2; ++k) {
    const auto J = [&](const KeypointSet& s, int i) { return s.jacobians.at({0, k, i / 2, i % 2}); };
    const double a = J(src, 0), b = J(src, 1), c = J(src, 2), d = J(src, 3), det = a * d - b * c;
    const double inv[4] = {d / det, -b / det, -c / det, a / det};
    double L[4];
    for (int r = 0; r < 2; ++r)
      for (int col = 0; col < 2; ++col) L[r * 2 + col] = J(drv, r * 2) * inv[col] + J(drv, r * 2 + 1) * inv[2 + col];
    const double ps[2] = {src.positions.at({0, k, 0}), src.positions.at({0, k, 1})};
    for (int r = 0; r < 2; ++r) {
      CHECK(la.theta.at({0, k, r, 0}) == doctest::Approx(L[r * 2]).epsilon(1e-12));
      CHECK(la.theta.at({0, k, r, 1}) == doctest::Approx(L[r * 2 + 1]).epsilon(1e-12));
      const double t = drv.positions.at({0, k, r}) - (L[r * 2] * ps[0] + L[r * 2 + 1] * ps[1]);
      CHECK(la.theta.at({0, k, r, 2}) == doctest::Approx(t).epsilon(1e-12));
    }
    CHECK_FALSE(la.degenerate[static_cast<std::size_t>(k)]);
  }
}

TEST_CASE("singular source Jacobian falls back to identity and is flagged") {
  const KeypointSet src = keypoints({0.1, 0.2}, {1.0, 2.0, 0.5, 1.0});
  const KeypointSet drv = keypoints({0.3, -0.1}, {1.0, 0.0, 0.0, 1.0});
  const LocalAffines la = local_affines(src, drv);
  CHECK(la.degenerate[0]);
  CHECK(la.theta.at({0, 0, 0, 0}) == 1.0);
  CHECK(la.theta.at({0, 0, 0, 1}) == 0.0);
  CHECK(la.theta.at({0, 0, 1, 1}) == 1.0);
}

TEST_CASE("equal keypoints give identity warp fields") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  std::vector<double> pos(8), jac(16);
  for (double& v : pos) v = u(rng);
  jac = {1.1, 0.2, -0.1, 0.9, 0.7, 0.0, 0.3, 1.2, 1.0, 0.5, 0.5, 1.0, 2.0, 0.0, 0.0, 0.5};
  const KeypointSet s = keypoints(pos, jac);
  const Tensor fields = dilate(local_affines(s, s).theta, 16, 20);
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 20; ++j) {
        CHECK(std::abs(fields.at({0, k, i, j, 0}) - coord(j, 20)) < 1e-6);
        CHECK(std::abs(fields.at({0, k, i, j, 1}) - coord(i, 16)) < 1e-6);
      }
}

TEST_CASE("dilate matches per-pixel affine evaluation") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> theta(static_cast<std::size_t>(10 * 6));
  for (double& v : theta) v = u(rng);
  const Tensor fields = dilate(Tensor::from({1, 10, 2, 3}, theta), 24, 18);
  double worst = 0.0;
  for (int k = 0; k < 10; ++k)
    for (int i = 0; i < 24; ++i)
      for (int j = 0; j < 18; ++j) {
        const double* t = &theta[static_cast<std::size_t>(k * 6)];
        const double x = coord(j, 18), y = coord(i, 24);
        worst = std::max(worst, std::abs(fields.at({0, k, i, j, 0}) - (t[0] * x + t[1] * y + t[2])));
        worst = std::max(worst, std::abs(fields.at({0, k, i, j, 1}) - (t[3] * x + t[4] * y + t[5])));
      }
  CHECK(worst < 1e-12);
}

TEST_CASE("local affine gradients") {
  const KeypointSet src = keypoints({0.1, -0.2, 0.5, 0.4}, {1.2, 0.1, -0.2, 0.9, 1.0, 0.3, 0.0, 1.0}, true);
  const KeypointSet drv = keypoints({-0.3, 0.25, 0.0, 0.1}, {0.8, -0.3, 0.4, 1.1, 2.0, 0.5, 0.0, 0.5}, true);
  const Tensor w = random_tensor({1, 2, 2, 3}, -1, 1, 3);
  auto loss = [&] { return ops::sum(local_affines(src, drv).theta * w); };
  for (const Tensor& p : {src.positions, src.jacobians, drv.positions, drv.jacobians})
    CHECK(gradcheck(loss, p).relative_error < 1e-6);
}

TEST_CASE("correspondence model: shapes and identity Jacobian initialisation") {
  CorrespondenceConfig cfg;
  cfg.num_keypoints = 3;
  cfg.heatmap_size = 32;
  cfg.num_blocks = 3;
  const CorrespondenceModel model(cfg, 5);
  const KeypointSet kp = model.predict(random_tensor({2, 3, 40, 48}, 0, 1, 1));
  CHECK(kp.positions.shape() == Shape{2, 3, 2});
  CHECK(kp.heatmaps.shape() == Shape{2, 3, 32, 32});
  for (double v : kp.positions.values()) CHECK(std::abs(v) <= 1.0);
  for (int n = 0; n < 2; ++n)
    for (int k = 0; k < 3; ++k) {
      // Heat-weighted sums of constant maps: exact up to the softmax's rounding.
      CHECK(std::abs(kp.jacobians.at({n, k, 0, 0}) - 1.0) < 1e-12);
      CHECK(std::abs(kp.jacobians.at({n, k, 0, 1})) < 1e-12);
    }
  // Same seed, same weights.
  const KeypointSet again = CorrespondenceModel(cfg, 5).predict(random_tensor({2, 3, 40, 48}, 0, 1, 1));
  CHECK(std::equal(kp.positions.values().begin(), kp.positions.values().end(), again.positions.values().begin()));
}

TEST_CASE("correspond produces full-resolution candidates") {
  const Pipeline p = Pipeline::create(small_model(3), 2);
  const BinaryMask y_A = testing::random_blob(40, 56, 1), x_A = testing::random_blob(40, 56, 2);
  const RGBImage y_B = testing::random_image(3, 40, 56, 3);
  const CorrespondenceOutput c = correspond(p.correspondence, x_A, y_A, y_B);
  CHECK(c.fields.shape() == Shape{1, 3, 40, 56, 2});
  CHECK(c.warped_masks.shape() == Shape{1, 3, 40, 56});
  CHECK(c.warped_images.shape() == Shape{1, 3, 3, 40, 56});
}

TEST_CASE("attention maps are per-pixel distributions") {
  const int k = 3;
  TransportModel tm(k, AttentionConfig{4, 16, 3}, 1);
  GuidanceModel gm(k, AttentionConfig{4, 16, 3}, 2);
  nn::NamedTensors params;
  tm.collect("t", params);
  gm.collect("g", params);
  perturb(params, 3, 0.5);
  const Tensor wm = random_tensor({3, k, 64, 64}, 0, 1, 4), conf = random_tensor({3, k, 64, 64}, -1, 1, 5);
  const Tensor ex = random_tensor({3, 3, 64, 64}, 0, 1, 6);
  const Tensor aI = attention_I(tm, wm, conf, ex), aT = attention_T(gm, wm, conf, ex);
  CHECK(aI.dim(1) == k + 1);
  CHECK(aT.dim(1) == k);
  for (const Tensor* a : {&aI, &aT}) {
    const Tensor s = ops::sum(*a, 1);
    double worst = 0.0;
    for (double v : s.values()) worst = std::max(worst, std::abs(v - 1.0));
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("transport output is a per-pixel convex combination of candidates") {
  for (int f = 0; f < 10; ++f) {
    const int k = 3;
    const Tensor attn = softmax_random({1, k + 1, 8, 8}, 100 + f);
    const Tensor wi = random_tensor({1, k, 3, 8, 8}, 0, 1, 200 + f), wm = random_tensor({1, k, 8, 8}, 0, 1, 300 + f);
    const Tensor yb = random_tensor({1, 3, 8, 8}, 0, 1, 400 + f), ya = random_tensor({1, 1, 8, 8}, 0, 1, 500 + f);
    const TransportResult r = transport(attn, wi, wm, yb, ya);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
          double lo = yb.at({0, c, i, j}), hi = lo;
          for (int kk = 0; kk < k; ++kk) {
            lo = std::min(lo, wi.at({0, kk, c, i, j}));
            hi = std::max(hi, wi.at({0, kk, c, i, j}));
          }
          const double v = r.image.at({0, c, i, j});
          CHECK(v >= lo - 1e-12);
          CHECK(v <= hi + 1e-12);
        }
  }
}

TEST_CASE("all attention on the background candidate returns the exemplar exactly") {
  const int k = 2;
  std::vector<double> a(static_cast<std::size_t>((k + 1) * 64), 0.0);
  std::fill(a.begin(), a.begin() + 64, 1.0);
  const Tensor yb = random_tensor({1, 3, 8, 8}, 0, 1, 1), ya = random_tensor({1, 1, 8, 8}, 0, 1, 2);
  const TransportResult r = transport(Tensor::from({1, k + 1, 8, 8}, a), random_tensor({1, k, 3, 8, 8}, 0, 1, 3),
                                      random_tensor({1, k, 8, 8}, 0, 1, 4), yb, ya);
  CHECK(std::equal(r.image.values().begin(), r.image.values().end(), yb.values().begin()));
  CHECK(std::equal(r.mask.values().begin(), r.mask.values().end(), ya.values().begin()));
}

TEST_CASE("transport fusion gradients") {
  const int k = 2;
  const Tensor logits = random_tensor({1, k + 1, 8, 8}, -2, 2, 1, true);
  const Tensor wi = random_tensor({1, k, 3, 8, 8}, 0, 1, 2, true), wm = random_tensor({1, k, 8, 8}, 0, 1, 3, true);
  const Tensor yb = random_tensor({1, 3, 8, 8}, 0, 1, 4, true), ya = random_tensor({1, 1, 8, 8}, 0, 1, 5, true);
  const Tensor w = random_tensor({1, 3, 8, 8}, -1, 1, 6);
  auto loss = [&] {
    const TransportResult r = transport(ops::softmax(logits, 1), wi, wm, yb, ya);
    return ops::sum(r.image * w) + ops::sum(ops::square(r.mask));
  };
  for (const Tensor& p : {logits, wi, wm, yb, ya}) CHECK(gradcheck(loss, p).relative_error < 1e-3);
}

TEST_CASE("fused warp field and pseudo ground truth") {
  const int k = 3;
  const Tensor fields = random_tensor({1, k, 8, 8, 2}, -1, 1, 1);
  std::vector<double> onehot(static_cast<std::size_t>(k * 64), 0.0);
  std::fill(onehot.begin() + 64, onehot.begin() + 128, 1.0);
  const Tensor fused = fuse_warpfields(Tensor::from({1, k, 8, 8}, onehot), fields);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      // Anchored fusion c0 + w (c1 - c0): one rounding step away from c1.
      for (int c = 0; c < 2; ++c) CHECK(std::abs(fused.at({0, i, j, c}) - fields.at({0, 1, i, j, c})) < 1e-12);

  const Tensor identity = dilate(Tensor::from({1, 1, 2, 3}, {1, 0, 0, 0, 1, 0}), 8, 8);
  const Tensor yb = random_tensor({1, 3, 8, 8}, 0, 1, 2), ya = random_tensor({1, 1, 8, 8}, 0, 1, 3);
  const PseudoGT pg = pseudo_ground_truth(ops::reshape(identity, {1, 8, 8, 2}), ya, yb);
  CHECK(std::equal(pg.image.values().begin(), pg.image.values().end(), yb.values().begin()));
  CHECK(std::equal(pg.mask.values().begin(), pg.mask.values().end(), ya.values().begin()));
}

TEST_CASE("boundary IoU loss: identical, disjoint, gradients") {
  const Tensor a = Tensor::from({1, 1, 8, 8}, testing::random_blob(8, 8, 1).data);
  CHECK(boundary_iou_loss(a, a, 1).item() < 1e-6);
  std::vector<double> left(64, 0.0), right(64, 0.0);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 3; ++j) left[static_cast<std::size_t>(i * 8 + j)] = right[static_cast<std::size_t>(i * 8 + 7 - j)] = 1.0;
  CHECK(boundary_iou_loss(Tensor::from({1, 1, 8, 8}, left), Tensor::from({1, 1, 8, 8}, right), 1).item() ==
        doctest::Approx(1.0).epsilon(1e-6));

  const Tensor w = random_tensor({1, 2, 8, 8}, 0.05, 0.95, 2, true), x = random_tensor({1, 1, 8, 8}, 0.05, 0.95, 3, true);
  auto loss = [&] { return boundary_iou_loss(w, x, 2); };
  CHECK(gradcheck(loss, w).relative_error < 1e-3);
  CHECK(gradcheck(loss, x).relative_error < 1e-3);
}

TEST_CASE("contextual loss: near zero on identical textured input, gradients") {
  const auto& phi = default_features();
  const Tensor img = random_tensor({1, 3, 32, 32}, 0, 1, 7);
  CHECK(contextual_loss(img, img, ContextualConfig{}, phi).item() < 1e-4);

  const Tensor f = random_tensor({1, 6, 8, 8}, -1, 1, 8, true), t = random_tensor({1, 6, 8, 8}, -1, 1, 9);
  auto loss = [&] { return contextual_similarity_loss(f, t, 0.5, 1e-5); };
  CHECK(gradcheck(loss, f).relative_error < 1e-3);
}

TEST_CASE("perceptual loss vanishes on identical input") {
  const Tensor img = random_tensor({1, 3, 16, 16}, 0, 1, 1);
  CHECK(perceptual_loss(img, img, default_features()).item() == 0.0);
  CHECK(perceptual_loss(img, random_tensor({1, 3, 16, 16}, 0, 1, 2), default_features()).item() > 0.0);
}

TEST_CASE("equivariance loss is zero for the identity deformation") {
  const Pipeline p = Pipeline::create(small_model(3), 1);
  perturb(p.segment("correspondence"), 2, 0.05);
  const Tensor img = random_tensor({2, 3, 32, 32}, 0, 1, 3);
  const std::vector<geometry::TPSParams> none{geometry::zero_tps(5), geometry::zero_tps(5)};
  CHECK(equivariance_loss(p.correspondence, img, none).item() < 1e-6);
  const Tensor same = deform(img, none, Padding::Border);
  CHECK(std::equal(same.values().begin(), same.values().end(), img.values().begin()));
}

TEST_CASE("equivariance loss from explicit keypoints") {
  // deformed(z) = image(T(z)) with a pure shift T(z) = z + s: a keypoint at p
  // on the image sits at p - s on the deformation.
  geometry::TPSParams shift = geometry::zero_tps(5);
  shift.jitter = geometry::Affine2D::shift(0.2, -0.1);
  const std::vector<geometry::ThinPlateSpline> splines{geometry::ThinPlateSpline(shift)};
  const KeypointSet on_img = keypoints({0.3, 0.1}, {1, 0, 0, 1});
  CHECK(equivariance_loss(on_img, keypoints({0.1, 0.2}, {1, 0, 0, 1}), splines).item() < 1e-12);
  // Off by 0.1 in x: mean over the 2 coordinates of |error| = 0.05.
  CHECK(equivariance_loss(on_img, keypoints({0.2, 0.2}, {1, 0, 0, 1}), splines).item() ==
        doctest::Approx(0.05).epsilon(1e-9));
}

TEST_CASE("total loss is the weighted sum of its terms") {
  LossTerms t;
  t.eq = Tensor::scalar(0.1);
  t.perc = Tensor::scalar(0.2);
  t.context = Tensor::scalar(0.3);
  t.bound = Tensor::scalar(0.4);
  t.mask_I = Tensor::scalar(0.5);
  t.mask_T = Tensor::scalar(0.6);
  t.rec = Tensor::scalar(0.7);
  LossWeights w;
  w.eq = 2, w.perc = 3, w.context = 5, w.bound = 7, w.mask = 11, w.rec = 13, w.cyc = 17;
  const TotalLoss total = total_loss(t, w);
  const double expected = 2 * 0.1 + 3 * 0.2 + 5 * 0.3 + 7 * 0.4 + 11 * (0.5 + 0.6) + 13 * 0.7;
  CHECK(total.total.item() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(total.breakdown.at("total") == doctest::Approx(expected).epsilon(1e-12));
  CHECK(total.breakdown.count("cyc") == 0);
  CHECK(total.breakdown.at("rec") == 0.7);
}

TEST_CASE("L1 losses") {
  const Tensor a = Tensor::from({1, 1, 1, 2}, {0.0, 1.0}), b = Tensor::from({1, 1, 1, 2}, {0.5, 0.5});
  CHECK(reconstruction_loss(a, b).item() == 0.5);
  CHECK(cycle_loss(a, a).item() == 0.0);
  const MaskLosses m = mask_alignment_losses(a, b, a);
  CHECK(m.transport.item() == 0.0);
  CHECK(m.guidance.item() == 0.5);
  CHECK_THROWS_AS(reconstruction_loss(a, Tensor::zeros({1, 1, 2, 1})), ShapeError);
}

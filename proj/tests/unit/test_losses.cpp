#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "mdepth/instrumentation.hpp"
#include "mdepth/losses.hpp"
#include "mdepth/ops.hpp"

using namespace mdepth;
using mdepth::testing::grad_check;
using mdepth::testing::random_tensor;
using TensorD = Tensor<double>;

namespace {

// Sliding-window SSIM with clamped (edge-replicated) neighbours.
std::vector<double> ssim_ref(const TensorD& x, const TensorD& y) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::vector<double> out(C * H * W);
  auto px = [&](const TensorD& t, std::size_t c, long r, long q) {
    r = std::clamp<long>(r, 0, long(H) - 1);
    q = std::clamp<long>(q, 0, long(W) - 1);
    return t.at((c * H + std::size_t(r)) * W + std::size_t(q));
  };
  for (std::size_t c = 0; c < C; ++c)
    for (long r = 0; r < long(H); ++r)
      for (long q = 0; q < long(W); ++q) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (long dr = -1; dr <= 1; ++dr)
          for (long dq = -1; dq <= 1; ++dq) {
            const double a = px(x, c, r + dr, q + dq), b = px(y, c, r + dr, q + dq);
            mx += a;
            my += b;
            xx += a * a;
            yy += b * b;
            xy += a * b;
          }
        mx /= 9;
        my /= 9;
        const double vx = xx / 9 - mx * mx, vy = yy / 9 - my * my, cxy = xy / 9 - mx * my;
        out[(c * H + std::size_t(r)) * W + std::size_t(q)] =
            (2 * mx * my + kSsimC1) * (2 * cxy + kSsimC2) / ((mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2));
      }
  return out;
}

std::vector<double> pe_ref(const TensorD& x, const TensorD& y, double alpha) {
  const std::size_t C = x.dim(0), N = x.dim(1) * x.dim(2);
  const auto s = ssim_ref(x, y);
  std::vector<double> out(N, 0.0);
  for (std::size_t p = 0; p < N; ++p) {
    double d = 0, l1 = 0;
    for (std::size_t c = 0; c < C; ++c) {
      d += 1 - s[c * N + p];
      l1 += std::abs(x.at(c * N + p) - y.at(c * N + p));
    }
    out[p] = alpha / 2 * d / double(C) + (1 - alpha) * l1 / double(C);
  }
  return out;
}

double ssi_psl_ref(const std::vector<double>& a, const std::vector<double>& b) {
  auto norm = [](std::vector<double> d) {
    auto s = d;
    std::sort(s.begin(), s.end());
    const double med = s[(s.size() - 1) / 2];
    double mad = 0;
    for (double v : d) mad += std::abs(v - med);
    mad = std::max(mad / double(d.size()), 1e-6);
    for (double& v : d) v = (v - med) / mad;
    return d;
  };
  const auto na = norm(a), nb = norm(b);
  double acc = 0;
  for (std::size_t i = 0; i < na.size(); ++i) acc += std::abs(na[i] - nb[i]);
  return acc / double(na.size());
}

std::vector<double> vals(const TensorD& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Ssim, SelfSimilarityIsOne) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({3, 5, 6}, rng, 0, 1, false);
  const auto s = ssim(x, x);
  for (double v : s.values()) EXPECT_EQ(v, 1.0);
}

TEST(Ssim, ConstantPatchClosedForm) {
  auto s = ssim(TensorD::zeros({1, 4, 4}), TensorD::full({1, 4, 4}, 1.0));
  const double expect = (2 * 0 * 1 + kSsimC1) * (2 * 0 + kSsimC2) / ((0 + 1 + kSsimC1) * (0 + 0 + kSsimC2));
  for (double v : s.values()) EXPECT_NEAR(v, expect, 1e-15);
}

TEST(Ssim, MatchesSlidingWindowReference) {
  std::mt19937_64 rng(2);
  auto x = random_tensor({3, 6, 7}, rng, 0, 1, false);
  auto y = random_tensor({3, 6, 7}, rng, 0, 1, false);
  const auto ref = ssim_ref(x, y);
  const auto s = ssim(x, y);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(s.at(i), ref[i], 1e-10);
}

TEST(Ssim, ShapeMismatchThrows) {
  EXPECT_THROW(ssim(TensorD::zeros({1, 4, 4}), TensorD::zeros({1, 4, 5})), TensorError);
}

TEST(PhotometricError, IdenticalImagesGiveZero) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({3, 5, 5}, rng, 0, 1, false);
  const auto pe = photometric_error(x, x, 0.85);
  for (double v : pe.values()) EXPECT_EQ(v, 0.0);
}

TEST(PhotometricError, AlphaZeroIsChannelMeanL1) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({3, 4, 4}, rng, 0, 1, false);
  auto y = random_tensor({3, 4, 4}, rng, 0, 1, false);
  auto pe = photometric_error(x, y, 0.0);
  for (std::size_t p = 0; p < 16; ++p) {
    double l1 = 0;
    for (std::size_t c = 0; c < 3; ++c) l1 += std::abs(x.at(c * 16 + p) - y.at(c * 16 + p));
    EXPECT_NEAR(pe.at(p), l1 / 3, 1e-15);
  }
}

TEST(PhotometricError, MatchesComposedReference) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({3, 5, 6}, rng, 0, 1, false);
  auto y = random_tensor({3, 5, 6}, rng, 0, 1, false);
  const auto ref = pe_ref(x, y, 0.85);
  const auto pe = photometric_error(x, y, 0.85);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_NEAR(pe.at(i), ref[i], 1e-10);
    EXPECT_GE(pe.at(i), 0.0);
  }
}

TEST(SslLoss, PerfectReconstructionGivesZero) {
  std::mt19937_64 rng(6);
  auto t = random_tensor({3, 4, 4}, rng, 0, 1, false);
  auto p = random_tensor({3, 4, 4}, rng, 0, 1, false);
  auto n = random_tensor({3, 4, 4}, rng, 0, 1, false);
  for (bool automask : {false, true}) {
    LossConfig cfg;
    cfg.use_automask = automask;
    EXPECT_EQ(ssl_loss(t, p, n, t, t, cfg).item(), 0.0);
  }
}

TEST(SslLoss, StaticTripletIsMaskedOut) {
  std::mt19937_64 rng(7);
  auto t = random_tensor({3, 4, 4}, rng, 0, 1, false);
  auto r1 = random_tensor({3, 4, 4}, rng, 0, 1, false);
  auto r2 = random_tensor({3, 4, 4}, rng, 0, 1, false);
  LossConfig cfg;
  EXPECT_EQ(ssl_loss(t, t, t, r1, r2, cfg).item(), 0.0);
  EXPECT_EQ(ssl_loss(t, t, t, t, t, cfg).item(), 0.0);
}

TEST(SslLoss, HandCaseMatchesPerPixelEnumeration) {
  std::mt19937_64 rng(8);
  const Shape s{1, 2, 2};
  auto t = random_tensor(s, rng, 0, 1, false);
  auto prev = random_tensor(s, rng, 0, 1, false);
  auto next = random_tensor(s, rng, 0, 1, false);
  // Reconstructions close to the target at two pixels, far at the others.
  auto rp = TensorD::from_data(s, {t.at(0) + 0.01, 1 - t.at(1), t.at(2), 1 - t.at(3)});
  auto rn = TensorD::from_data(s, {1 - t.at(0), t.at(1) - 0.02, 1 - t.at(2), 0.5});
  for (double alpha : {0.0, 0.85})
    for (bool use_min : {false, true})
      for (bool automask : {false, true}) {
        LossConfig cfg;
        cfg.alpha = alpha;
        cfg.use_min_reprojection = use_min;
        cfg.use_automask = automask;
        const auto ep = pe_ref(t, rp, alpha), en = pe_ref(t, rn, alpha);
        const auto ip = pe_ref(t, prev, alpha), in = pe_ref(t, next, alpha);
        double acc = 0;
        for (std::size_t k = 0; k < 4; ++k) {
          const double w = use_min ? std::min(ep[k], en[k]) : 0.5 * (ep[k] + en[k]);
          const double mu = automask ? (w < std::min(ip[k], in[k]) ? 1.0 : 0.0) : 1.0;
          acc += mu * w;
        }
        EXPECT_NEAR(ssl_loss(t, prev, next, rp, rn, cfg).item(), acc / 4, 1e-10)
            << "alpha=" << alpha << " min=" << use_min << " mask=" << automask;
      }
}

TEST(SsiNormalize, HandCase) {
  auto d = ssi_normalize(TensorD::from_data({3}, {1, 2, 3}));
  EXPECT_NEAR(d.at(0), -1.5, 1e-12);
  EXPECT_NEAR(d.at(1), 0.0, 1e-12);
  EXPECT_NEAR(d.at(2), 1.5, 1e-12);
}

TEST(SsiNormalize, ConstantGivesZeros) {
  const auto n = ssi_normalize(TensorD::full({3, 3}, 4.2));
  for (double v : n.values()) EXPECT_EQ(v, 0.0);
}

TEST(SsiNormalize, ScaleShiftInvariant) {
  std::mt19937_64 rng(9);
  auto d = random_tensor({5, 6}, rng, 0.1, 1.0, false);
  auto a = ssi_normalize(d), b = ssi_normalize(d * 3.7 - 2.0);
  for (std::size_t i = 0; i < d.numel(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-6);
}

TEST(SsiNormalize, MedianZeroMeanAbsOne) {
  std::mt19937_64 rng(10);
  auto n = ssi_normalize(random_tensor({7, 5}, rng, 0.1, 1.0, false));
  EXPECT_NEAR(median(n).item(), 0.0, 1e-6);
  EXPECT_NEAR(mean(abs(n)).item(), 1.0, 1e-6);
}

TEST(PslLoss, IdenticalGivesZero) {
  std::mt19937_64 rng(11);
  auto d = random_tensor({4, 4}, rng, 0.1, 1.0, false);
  EXPECT_EQ(psl_loss(d, d).item(), 0.0);
}

TEST(PslLoss, AffineInvariant) {
  std::mt19937_64 rng(12);
  auto d = random_tensor({4, 6}, rng, 0.1, 1.0, false);
  EXPECT_LT(psl_loss(d * 2.0 + 3.0, d).item(), 1e-6);
}

TEST(PslLoss, HandCaseMatchesScalarEvaluation) {
  const std::vector<double> a{0.2, 0.9, 0.4, 0.5}, b{0.3, 0.1, 0.8, 0.6};
  auto got = psl_loss(TensorD::from_data({2, 2}, a), TensorD::from_data({2, 2}, b)).item();
  EXPECT_NEAR(got, ssi_psl_ref(a, b), 1e-12);
}

TEST(PslLoss, PseudoReceivesNoGradient) {
  auto a = TensorD::from_data({2, 2}, {0.2, 0.9, 0.4, 0.5}, true);
  auto b = TensorD::from_data({2, 2}, {0.3, 0.1, 0.8, 0.6}, true);
  psl_loss(a, b).backward();
  EXPECT_TRUE(a.has_grad());
  EXPECT_FALSE(b.has_grad());
}

namespace {

struct Scene {
  LossInputs<double> in;
  std::vector<TensorD> pyramid;
};

// Support frames are exact reconstructions under the true disparity, so the
// warped error is far below the unwarped error and the auto-mask is stable
// under small perturbations.
Scene make_scene(std::mt19937_64& rng, std::size_t H, std::size_t W, std::size_t n_scales, bool requires_grad) {
  Scene s;
  auto img = random_tensor({3, H, W}, rng, 0, 1, false);
  s.in.intrinsics = TensorD::from_data({4}, {0.58 * double(W), 0.58 * double(W), 0.5 * double(W), 0.5 * double(H)});
  s.in.pose_next = se3_from_axis_angle(TensorD::from_data({3}, {0.01, -0.02, 0.01}),
                                       TensorD::from_data({3}, {0.08, -0.03, 0.05}));
  s.in.pose_prev = se3_from_axis_angle(TensorD::from_data({3}, {0.01, -0.02, 0.01}),
                                       TensorD::from_data({3}, {0.08, -0.03, 0.05}), true);
  for (std::size_t k = 0; k < n_scales; ++k) {
    s.pyramid.push_back(random_tensor({H >> k, W >> k}, rng, 0.3, 1.0, requires_grad));
  }
  s.in.prev = img;
  s.in.next = random_tensor({3, H, W}, rng, 0, 1, false);
  s.in.target = synthesize_view(img, s.pyramid[0].detach() + 1e-4, s.in.pose_prev, s.in.intrinsics);
  s.in.pseudo = random_tensor({H, W}, rng, 0.1, 1.0, false);
  return s;
}

}  // namespace

TEST(TotalLoss, LambdaOneIsPureSsl) {
  std::mt19937_64 rng(13);
  auto s = make_scene(rng, 8, 12, 2, false);
  LossConfig cfg;
  cfg.lambda = 1.0;
  cfg.n_scales = 2;
  s.in.pseudo = TensorD();
  counters().reset();
  const auto terms = total_loss(s.pyramid, s.in, cfg);
  EXPECT_NEAR(terms.total.item(), terms.ssl, 1e-15);
  EXPECT_EQ(counters().views_synthesized.load(), 4u);
}

TEST(TotalLoss, LambdaZeroMatchingPseudoIsZero) {
  std::mt19937_64 rng(14);
  auto s = make_scene(rng, 8, 12, 3, false);
  LossConfig cfg;
  cfg.lambda = 0.0;
  cfg.n_scales = 3;
  const auto d = random_tensor({8, 12}, rng, 0.1, 1.0, false);
  s.in.pseudo = d + 1e-4;
  s.pyramid = {d, resize_bilinear(d, 4, 6), resize_bilinear(d, 2, 3)};
  // Upsampled coarse levels only approximate d, so the multi-scale case uses
  // full-resolution copies.
  cfg.multiscale_psl = false;
  counters().reset();
  EXPECT_LT(total_loss(s.pyramid, s.in, cfg).total.item(), 1e-12);
  cfg.multiscale_psl = true;
  EXPECT_LT(total_loss(std::vector<TensorD>{d, d, d}, s.in, cfg).total.item(), 1e-12);
  EXPECT_EQ(counters().views_synthesized.load(), 0u);
}

TEST(TotalLoss, TwoScaleComposition) {
  std::mt19937_64 rng(15);
  auto s = make_scene(rng, 8, 12, 2, false);
  LossConfig cfg;
  cfg.n_scales = 2;
  const auto terms = total_loss(s.pyramid, s.in, cfg);
  double expect = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto d = resize_bilinear(s.pyramid[i], 8, 12) + 1e-4;
    const auto rp = synthesize_view(s.in.prev, d, s.in.pose_prev, s.in.intrinsics);
    const auto rn = synthesize_view(s.in.next, d, s.in.pose_next, s.in.intrinsics);
    const double ssl = ssl_loss(s.in.target, s.in.prev, s.in.next, rp, rn, cfg).item();
    const double psl = psl_loss(d, s.in.pseudo).item();
    expect += cfg.lambda * ssl + (1 - cfg.lambda) * psl;
  }
  EXPECT_NEAR(terms.total.item(), expect / 2, 1e-12);
}

TEST(TotalLoss, ScaleCountMismatchThrows) {
  std::mt19937_64 rng(16);
  auto s = make_scene(rng, 8, 12, 2, false);
  LossConfig cfg;
  cfg.n_scales = 3;
  EXPECT_THROW(total_loss(s.pyramid, s.in, cfg), std::invalid_argument);
}

TEST(Gradients, SsimAndPhotometricError) {
  std::mt19937_64 rng(20);
  auto x = random_tensor({3, 8, 8}, rng);
  auto y = random_tensor({3, 8, 8}, rng);
  EXPECT_LT(grad_check({x, y}, [&] { return mean(ssim(x, y)); }).max_rel_error, 1e-4);
  EXPECT_LT(grad_check({x, y}, [&] { return mean(photometric_error(x, y, 0.85)); }).max_rel_error, 1e-4);
}

TEST(Gradients, SslLoss) {
  std::mt19937_64 rng(21);
  auto t = random_tensor({3, 6, 8}, rng, 0, 1, false);
  auto prev = random_tensor({3, 6, 8}, rng, 0, 1, false);
  auto next = random_tensor({3, 6, 8}, rng, 0, 1, false);
  auto rp = t + random_tensor({3, 6, 8}, rng, -0.05, 0.05, false);
  auto rn = t + random_tensor({3, 6, 8}, rng, -0.05, 0.05, false);
  auto a = TensorD::from_data(rp.shape(), vals(rp), true);
  auto b = TensorD::from_data(rn.shape(), vals(rn), true);
  for (bool use_min : {false, true}) {
    LossConfig cfg;
    cfg.use_min_reprojection = use_min;
    EXPECT_LT(grad_check({a, b}, [&] { return ssl_loss(t, prev, next, a, b, cfg); }).max_rel_error, 1e-4);
  }
}

TEST(Gradients, SsiNormalizeAndPsl) {
  std::mt19937_64 rng(22);
  auto d = random_tensor({6, 8}, rng, 0.1, 1.0);
  auto p = random_tensor({6, 8}, rng, 0.1, 1.0, false);
  auto w = random_tensor({6, 8}, rng, -1, 1, false);
  EXPECT_LT(grad_check({d}, [&] { return mean(ssi_normalize(d) * w); }).max_rel_error, 1e-4);
  EXPECT_LT(grad_check({d}, [&] { return psl_loss(d, p); }).max_rel_error, 1e-4);
}

TEST(Gradients, TotalLossOverPyramid) {
  std::mt19937_64 rng(23);
  auto s = make_scene(rng, 16, 24, 3, true);
  for (bool multiscale : {false, true}) {
    LossConfig cfg;
    cfg.n_scales = 3;
    cfg.multiscale_psl = multiscale;
    auto r = grad_check(s.pyramid, [&] { return total_loss(s.pyramid, s.in, cfg).total; });
    EXPECT_LT(r.max_rel_error, 1e-4) << "multiscale=" << multiscale;
  }
}

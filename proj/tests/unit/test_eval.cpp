#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "mdepth/eval.hpp"

using namespace mdepth;

namespace {

Plane<double> plane(std::size_t h, std::size_t w, std::vector<double> v) {
  Plane<double> p(h, w);
  p.data = std::move(v);
  return p;
}

Plane<double> random_depth(std::mt19937_64& rng, std::size_t h, std::size_t w, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Plane<double> p(h, w);
  for (auto& v : p.data) v = u(rng);
  return p;
}

// Straightforward reference: gather valid pixels into vectors, align with a
// sort-based median or normal equations, then accumulate each metric.
MetricReport oracle(const Plane<double>& pred, const Plane<double>& gt, Alignment al, double lo, double hi,
                    std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  std::vector<double> p, g;
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) {
      const double gv = gt(r, c);
      if (gv > lo && gv < hi) {
        p.push_back(pred(r, c));
        g.push_back(gv);
      }
    }
  const std::size_t n = p.size();
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  };
  if (al == Alignment::median) {
    const double s = median(g) / median(p);
    for (auto& v : p) v *= s;
  } else if (al == Alignment::least_squares) {
    double sxx = 0, sx = 0, sxy = 0, sy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = 1 / p[i], y = 1 / g[i];
      sxx += x * x;
      sx += x;
      sxy += x * y;
      sy += y;
    }
    const double det = sxx * double(n) - sx * sx;
    const double s = (sxy * double(n) - sx * sy) / det;
    const double b = (sxx * sy - sx * sxy) / det;
    for (auto& v : p) v = 1 / std::max(s / v + b, 1e-6);
  }
  MetricReport r;
  for (std::size_t i = 0; i < n; ++i) {
    const double pv = std::min(std::max(p[i], lo), hi), gv = g[i];
    r.abs_rel += std::abs(pv - gv) / gv / double(n);
    r.sq_rel += (pv - gv) * (pv - gv) / gv / double(n);
    r.rms += (pv - gv) * (pv - gv) / double(n);
    r.rms_log += std::pow(std::log(pv / gv), 2) / double(n);
    const double t = std::max(pv / gv, gv / pv);
    r.delta1 += (t < 1.25) / double(n);
    r.delta2 += (t < 1.5625) / double(n);
    r.delta3 += (t < 1.953125) / double(n);
  }
  r.rms = std::sqrt(r.rms);
  r.rms_log = std::sqrt(r.rms_log);
  r.valid_pixel_count = n;
  return r;
}

void expect_close(const MetricReport& a, const MetricReport& b, double tol) {
  EXPECT_NEAR(a.abs_rel, b.abs_rel, tol);
  EXPECT_NEAR(a.sq_rel, b.sq_rel, tol);
  EXPECT_NEAR(a.rms, b.rms, tol);
  EXPECT_NEAR(a.rms_log, b.rms_log, tol);
  EXPECT_NEAR(a.delta1, b.delta1, tol);
  EXPECT_NEAR(a.delta2, b.delta2, tol);
  EXPECT_NEAR(a.delta3, b.delta3, tol);
  EXPECT_EQ(a.valid_pixel_count, b.valid_pixel_count);
}

EvalProtocol plain(Alignment a) { return EvalProtocol::make(a, CropKind::none, 80); }

}  // namespace

TEST(Eval, PerfectPrediction) {
  std::mt19937_64 rng(1);
  const auto gt = random_depth(rng, 6, 8, 1, 50);
  for (auto a : {Alignment::median, Alignment::least_squares, Alignment::none}) {
    const auto r = compute_metrics(gt, gt, plain(a));
    EXPECT_NEAR(r.abs_rel, 0, 1e-12);
    EXPECT_NEAR(r.rms, 0, 1e-10);
    EXPECT_EQ(r.delta1, 1.0);
    EXPECT_EQ(r.valid_pixel_count, 48u);
  }
}

TEST(Eval, HandComputedTwoPixels) {
  const auto gt = plane(1, 2, {1, 2}), pred = plane(1, 2, {2, 2});
  const auto r = compute_metrics(pred, gt, plain(Alignment::none));
  EXPECT_DOUBLE_EQ(r.abs_rel, 0.5);
  EXPECT_DOUBLE_EQ(r.sq_rel, 0.5);
  EXPECT_DOUBLE_EQ(r.rms, std::sqrt(0.5));
  EXPECT_DOUBLE_EQ(r.rms_log, std::log(2.0) / std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(r.delta1, 0.5);
  EXPECT_DOUBLE_EQ(r.delta2, 0.5);
  EXPECT_DOUBLE_EQ(r.delta3, 0.5);
}

TEST(Eval, DeltaThresholdIsStrict) {
  // 5/4 is exactly 1.25 in binary.
  const auto r = compute_metrics(plane(1, 1, {5}), plane(1, 1, {4}), plain(Alignment::none));
  EXPECT_EQ(r.delta1, 0.0);
  EXPECT_EQ(r.delta2, 1.0);
  const auto under = compute_metrics(plane(1, 1, {std::nextafter(5.0, 0.0)}), plane(1, 1, {4}), plain(Alignment::none));
  EXPECT_EQ(under.delta1, 1.0);
}

TEST(Eval, GroundTruthRangeAndClamp) {
  const auto gt = plane(1, 4, {0.0005, 5, 90, 10});
  const auto pred = plane(1, 4, {1, 500, 1, 10});
  const auto r = compute_metrics(pred, gt, plain(Alignment::none));
  EXPECT_EQ(r.valid_pixel_count, 2u);
  // 500 is clamped to 80.
  EXPECT_DOUBLE_EQ(r.abs_rel, 0.5 * (75.0 / 5.0));
  EXPECT_THROW(compute_metrics(pred, plane(1, 4, {0, 0, 0, 0}), plain(Alignment::none)), std::invalid_argument);
}

TEST(Eval, GargCropOn100) {
  const auto [r0, r1, c0, c1] = crop_bounds(default_crop_fractions(CropKind::garg), 100, 100);
  EXPECT_EQ(r0, 40u);
  EXPECT_EQ(r1, 100u);
  EXPECT_EQ(c0, 3u);
  EXPECT_EQ(c1, 97u);
  const auto m = apply_crop(Mask(100, 100, 1), CropKind::garg);
  std::size_t n = 0;
  for (auto v : m.data) n += v;
  EXPECT_EQ(n, 60u * 94u);
  EXPECT_EQ(m(39, 50), 0);
  EXPECT_EQ(m(40, 3), 1);
  EXPECT_EQ(m(99, 96), 1);
  EXPECT_EQ(m(50, 97), 0);
}

TEST(Eval, CenterCropAndNone) {
  const auto [r0, r1, c0, c1] = crop_bounds(default_crop_fractions(CropKind::center), 8, 12);
  EXPECT_EQ(r0, 2u);
  EXPECT_EQ(r1, 6u);
  EXPECT_EQ(c0, 3u);
  EXPECT_EQ(c1, 9u);
  EXPECT_EQ(apply_crop(Mask(3, 3, 1), CropKind::none).data, Mask(3, 3, 1).data);
}

TEST(Eval, MaskedMedianEvenAndOdd) {
  const auto v = plane(1, 5, {5, 1, 4, 2, 100});
  Mask m(1, 5, 1);
  EXPECT_DOUBLE_EQ(masked_median(v, m), 4);
  m(0, 4) = 0;
  EXPECT_DOUBLE_EQ(masked_median(v, m), 3);
  EXPECT_THROW(masked_median(v, Mask(1, 5, 0)), std::invalid_argument);
}

TEST(Eval, MedianAlignmentIsScaleInvariant) {
  std::mt19937_64 rng(2);
  const auto gt = random_depth(rng, 10, 10, 1, 60);
  const auto pred = random_depth(rng, 10, 10, 1, 60);
  const auto base = compute_metrics(pred, gt, plain(Alignment::median));
  for (double k : {0.01, 3.5, 250.0}) {
    auto scaled = pred;
    for (auto& v : scaled.data) v *= k;
    expect_close(compute_metrics(scaled, gt, plain(Alignment::median)), base, 1e-12);
  }
}

TEST(Eval, LeastSquaresRecoversAffine) {
  std::mt19937_64 rng(3);
  const auto gd = random_depth(rng, 7, 9, 0.05, 1.0);
  Plane<double> pd = gd;
  for (auto& v : pd.data) v = (v - 3.0) / 2.0;
  const auto fit = lsq_fit(pd, gd, Mask(7, 9, 1));
  EXPECT_NEAR(fit.scale, 2.0, 1e-10);
  EXPECT_NEAR(fit.shift, 3.0, 1e-10);
  EXPECT_THROW(lsq_fit(pd, gd, Mask(7, 9, 0)), std::invalid_argument);
}

TEST(Eval, LeastSquaresIsAffineInvariantInDisparity) {
  std::mt19937_64 rng(4);
  const auto gt = random_depth(rng, 8, 8, 2, 40);
  const auto pred = random_depth(rng, 8, 8, 2, 40);
  const auto base = compute_metrics(pred, gt, plain(Alignment::least_squares));
  auto moved = pred;
  for (auto& v : moved.data) v = 1.0 / (0.4 / v + 0.01);
  expect_close(compute_metrics(moved, gt, plain(Alignment::least_squares)), base, 1e-9);
}

TEST(Eval, MatchesBruteForceReference) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t h = 20 + trial % 7, w = 30 + trial % 5;
    const auto gt = random_depth(rng, h, w, 0.5, 100);
    const auto pred = random_depth(rng, h, w, 0.5, 100);
    const auto a = static_cast<Alignment>(trial % 3);
    const auto c = static_cast<CropKind>(trial % 4);
    const double max_depth = trial % 2 ? 80 : 50;
    const auto p = EvalProtocol::make(a, c, max_depth);
    std::size_t r0 = 0, r1 = h, c0 = 0, c1 = w;
    if (c != CropKind::none) {
      const auto f = default_crop_fractions(c);
      r0 = std::size_t(std::floor(f.top * double(h)));
      r1 = std::size_t(std::ceil(f.bottom * double(h)));
      c0 = std::size_t(std::floor(f.left * double(w)));
      c1 = std::size_t(std::ceil(f.right * double(w)));
    }
    expect_close(compute_metrics(pred, gt, p), oracle(pred, gt, a, p.min_depth, max_depth, r0, r1, c0, c1), 1e-9);
  }
}

TEST(Eval, ExternalMaskIsRespected) {
  std::mt19937_64 rng(6);
  const auto gt = random_depth(rng, 4, 4, 1, 10);
  auto pred = gt;
  pred(0, 0) = 1000;
  Mask m(4, 4, 1);
  m(0, 0) = 0;
  const auto r = compute_metrics(pred, gt, plain(Alignment::none), m);
  EXPECT_EQ(r.valid_pixel_count, 15u);
  EXPECT_NEAR(r.abs_rel, 0, 1e-15);
}

TEST(Eval, AccumulatorAveragesFrames) {
  MetricAccumulator acc;
  MetricReport a, b;
  a.abs_rel = 0.1;
  a.delta1 = 1;
  a.valid_pixel_count = 10;
  b.abs_rel = 0.3;
  b.delta1 = 0.5;
  b.valid_pixel_count = 30;
  acc.add(a);
  acc.add(b);
  const auto m = acc.mean();
  EXPECT_DOUBLE_EQ(m.abs_rel, 0.2);
  EXPECT_DOUBLE_EQ(m.delta1, 0.75);
  EXPECT_EQ(m.valid_pixel_count, 40u);
  EXPECT_EQ(acc.frames(), 2u);
}

TEST(Eval, ProtocolParsingAndValidation) {
  EXPECT_EQ(parse_alignment("lsq"), Alignment::least_squares);
  EXPECT_EQ(parse_crop("garg"), CropKind::garg);
  EXPECT_THROW(parse_alignment("mean"), std::invalid_argument);
  EXPECT_THROW(parse_crop("top"), std::invalid_argument);
  auto p = EvalProtocol::make(Alignment::median, CropKind::eigen, 80);
  EXPECT_NO_THROW(p.validate());
  p.max_depth = p.min_depth;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Eval, CsvRowAndTable) {
  MetricReport r;
  r.abs_rel = 0.125;
  r.valid_pixel_count = 7;
  const auto row = metric_csv_row("median/garg/80m", r);
  EXPECT_EQ(row.rfind("median/garg/80m,", 0), 0u);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 8);
  EXPECT_NE(row.find(",7"), std::string::npos);
  std::ostringstream os;
  write_metric_table(os, {{"a", r}, {"b", r}});
  EXPECT_NE(os.str().find("AbsRel"), std::string::npos);
}

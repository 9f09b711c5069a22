#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "mdepth/ndtf.hpp"
#include "mdepth/ops.hpp"

using namespace mdepth;
using mdepth::testing::grad_check;
using mdepth::testing::random_tensor;
using TensorD = Tensor<double>;

namespace {

// Plain bilinear lookup with border clamp, pixel-space coordinates.
double bilinear_ref(const std::vector<double>& img, std::size_t H, std::size_t W, std::size_t c, double x,
                    double y) {
  x = std::clamp(x, 0.0, double(W - 1));
  y = std::clamp(y, 0.0, double(H - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(x)), y0 = static_cast<std::size_t>(std::floor(y));
  const auto x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const double fx = x - double(x0), fy = y - double(y0);
  auto at = [&](std::size_t yy, std::size_t xx) { return img[(c * H + yy) * W + xx]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

}  // namespace

TEST(Backward, SumOfSquares) {
  auto x = TensorD::from_data({3}, {1, 2, 3}, true);
  auto loss = sum(x * x);
  loss.backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, MeanSpreadsEvenly) {
  auto x = TensorD::from_data({2, 2}, {1, -2, 3, 5}, true);
  mean(x).backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(Backward, RejectsNonScalarLoss) {
  auto x = TensorD::from_data({2}, {1, 2}, true);
  auto y = x * 2.0;
  EXPECT_THROW(y.backward(), TensorError);
}

TEST(Backward, SecondBackwardThrows) {
  auto x = TensorD::from_data({2}, {1, 2}, true);
  auto loss = sum(square(x));
  loss.backward();
  EXPECT_THROW(loss.backward(), TensorError);
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  auto x = TensorD::from_data({1}, {3}, true);
  auto y = x * x;         // 9
  auto loss = sum(y + y);  // 2x^2, d/dx = 4x = 12
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Backward, NoGradGuardSkipsGraph) {
  auto x = TensorD::from_data({2}, {1, 2}, true);
  NoGradGuard guard;
  EXPECT_FALSE(sum(x).requires_grad());
}

TEST(Ops, MedianIsLowerMedian) {
  auto x = TensorD::from_data({4}, {4, 1, 3, 2}, true);
  auto m = median(x);
  EXPECT_DOUBLE_EQ(m.item(), 2.0);
  m.backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 0, 0, 1}));
}

TEST(Ops, BroadcastAdd) {
  auto a = TensorD::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = TensorD::from_data({3}, {10, 20, 30});
  auto c = a + b;
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()),
            (std::vector<double>{11, 22, 33, 14, 25, 36}));
}

TEST(Ops, ReductionIsDeterministic) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({1000}, rng, -1, 1, false);
  EXPECT_EQ(sum(x).item(), sum(x).item());
}

TEST(GridSample, IdentityLatticeIsExact) {
  std::mt19937_64 rng(1);
  auto img = random_tensor({3, 7, 9}, rng, 0, 1, false);
  std::vector<double> g;
  for (std::size_t y = 0; y < 7; ++y)
    for (std::size_t x = 0; x < 9; ++x) {
      g.push_back(2.0 * double(x) / 8.0 - 1.0);
      g.push_back(2.0 * double(y) / 6.0 - 1.0);
    }
  auto out = grid_sample(img, TensorD::from_data({7, 9, 2}, g));
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_EQ(out.at(i), img.at(i));
}

TEST(GridSample, MidpointAverages) {
  auto img = TensorD::from_data({1, 1, 2}, {2.0, 5.0});
  auto out = grid_sample(img, TensorD::from_data({1, 1, 2}, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(out.item(), 3.5);
}

TEST(GridSample, RejectsBadGrid) {
  auto img = TensorD::zeros({1, 2, 2});
  EXPECT_THROW(grid_sample(img, TensorD::zeros({2, 2, 3})), TensorError);
}

TEST(GridSample, MatchesScalarReference) {
  std::mt19937_64 rng(7);
  auto img = random_tensor({3, 5, 5}, rng, 0, 1, false);
  auto grid = random_tensor({4, 6, 2}, rng, -1, 1, false);
  auto out = grid_sample(img, grid);
  std::vector<double> iv(img.values().begin(), img.values().end());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 24; ++p) {
      const double x = (grid.at(2 * p) + 1) * 2.0, y = (grid.at(2 * p + 1) + 1) * 2.0;
      EXPECT_NEAR(out.at(c * 24 + p), bilinear_ref(iv, 5, 5, c, x, y), 1e-12);
    }
}

TEST(GridSample, BorderClampOutside) {
  auto img = TensorD::from_data({1, 2, 2}, {1, 2, 3, 4});
  auto out = grid_sample(img, TensorD::from_data({1, 1, 2}, {5.0, -5.0}));
  EXPECT_DOUBLE_EQ(out.item(), 2.0);
}

TEST(Resize, SameSizeIsIdentity) {
  std::mt19937_64 rng(2);
  auto img = random_tensor({2, 4, 6}, rng, 0, 1, false);
  auto out = resize_bilinear(img, 4, 6);
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_EQ(out.at(i), img.at(i));
}

TEST(Resize, ConstantStaysConstant) {
  auto img = TensorD::full({1, 3, 5}, 0.37);
  auto out = resize_bilinear(img, 7, 11);
  for (double v : out.values()) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(Resize, UpsampleMatchesScalarReference) {
  auto img = TensorD::from_data({1, 2, 2}, {1, 2, 3, 5});
  auto out = resize_bilinear(img, 4, 4);
  std::vector<double> iv{1, 2, 3, 5};
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      EXPECT_NEAR(out.at(y * 4 + x), bilinear_ref(iv, 2, 2, 0, double(x) / 3.0, double(y) / 3.0), 1e-14);
    }
}

TEST(Gradients, ElementwiseOps) {
  std::mt19937_64 rng(11);
  auto a = random_tensor({3, 4}, rng, 0.5, 2.0);
  auto b = random_tensor({4}, rng, 0.5, 2.0);
  auto r = grad_check({a, b}, [&] {
    auto y = log(a) * exp(b) / sqrt(a + b) - reciprocal(b) + softplus(a - b) + sigmoid(a * b) + elu(a - 1.2) +
             square(abs(a - b)) + clamp(a, 0.7, 1.6) + maximum(a, a * 0.9) + minimum(a, a * 1.1);
    return mean(y);
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Gradients, RodriguesHelpers) {
  auto x = TensorD::from_data({4}, {1e-12, 1e-5, 0.3, 2.5}, true);
  auto r = grad_check({x}, [&] { return sum(sinc_sqrt(x) + cosc_sqrt(x) * 3.0); }, 1e-7);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Gradients, ShapeOps) {
  std::mt19937_64 rng(12);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({3, 2}, rng);
  auto r = grad_check({a, b}, [&] {
    auto m = matmul(a, b);
    auto c = concat<double>({reshape(m, {4}), slice(reshape(transpose(b), {6}), 0, 1, 3)}, 0);
    return sum(square(c)) + mean_axis(a, 1).at(0) * 0.0 + sum(sum_axis(a, 0) * sum_axis(b, 1));
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Gradients, ConvPoolPad) {
  std::mt19937_64 rng(13);
  auto x = random_tensor({2, 6, 7}, rng, -1, 1);
  auto w = random_tensor({3, 2, 3, 3}, rng, -1, 1);
  auto bias = random_tensor({3}, rng, -1, 1);
  auto r = grad_check({x, w, bias}, [&] {
    auto y = conv2d(x, w, bias, 2, 1);
    auto z = avg_pool2d(pad_replicate(square(y), 1), 3, 1);
    return mean(z);
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Gradients, GridSampleImageAndGrid) {
  std::mt19937_64 rng(14);
  auto img = random_tensor({2, 5, 6}, rng);
  auto grid = random_tensor({3, 4, 2}, rng, -0.95, 0.95);
  auto r = grad_check({img, grid}, [&] { return mean(square(grid_sample(img, grid))); });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Gradients, ResizeAndMedian) {
  std::mt19937_64 rng(15);
  auto x = random_tensor({2, 3, 4}, rng);
  auto r = grad_check({x}, [&] {
    auto up = resize_bilinear(x, 6, 7);
    return mean(abs(up - median(up)));
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Ndtf, RoundTripIsBitExact) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 3, 4}, rng, -10, 10, false);
  std::stringstream ss;
  write_ndtf(ss, x);
  auto y = read_ndtf<double>(ss);
  EXPECT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Ndtf, RejectsBadMagic) {
  std::stringstream ss("NOPE\x01\x00");
  EXPECT_THROW(read_ndtf<float>(ss), std::runtime_error);
}

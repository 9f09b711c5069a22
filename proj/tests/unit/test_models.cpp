#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "mdepth/losses.hpp"
#include "mdepth/models.hpp"
#include "mdepth/ops.hpp"

using namespace mdepth;
using mdepth::testing::grad_check;
using mdepth::testing::random_tensor;
using TensorD = Tensor<double>;

TEST(DepthNet, LevelShapes) {
  Model<float> m(4);
  m.init_weights(1);
  const auto levels = m.depth.forward(Tensor<float>::full({3, 64, 96}, 0.5f));
  ASSERT_EQ(levels.size(), 4u);
  const std::size_t expect[4][2] = {{64, 96}, {32, 48}, {16, 24}, {8, 12}};
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(levels[k].shape(), (Shape{expect[k][0], expect[k][1]}));
    for (float v : levels[k].values()) EXPECT_GE(v, 0.0f);
  }
}

TEST(DepthNet, ZeroHeadsGiveZeroDisparity) {
  Model<float> m(4);
  m.init_weights(2);
  for (auto* h : m.depth.heads()) {
    for (auto& v : h->weight.mutable_values()) v = 0;
    for (auto& v : h->bias.mutable_values()) v = 0;
  }
  for (const auto& level : m.depth.forward(Tensor<float>::full({3, 32, 64}, 0.3f))) {
    for (float v : level.values()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(DepthNet, RejectsIndivisibleExtents) {
  Model<float> m(4);
  EXPECT_THROW(m.depth.forward(Tensor<float>::zeros({3, 48, 96})), std::invalid_argument);
  EXPECT_THROW(m.depth.forward(Tensor<float>::zeros({3, 64, 80})), std::invalid_argument);
}

TEST(DepthNet, DeterministicGivenWeights) {
  Model<float> m(4);
  m.init_weights(3);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<float> v(3 * 32 * 32);
  for (auto& x : v) x = u(rng);
  const auto img = Tensor<float>::from_data({3, 32, 32}, v);
  const auto a = m.depth.forward(img), b = m.depth.forward(img);
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].numel(); ++i) EXPECT_EQ(a[k].at(i), b[k].at(i));
}

TEST(Model, ParameterBudget) {
  Model<float> m(4);
  const auto n = m.parameter_count();
  EXPECT_GT(n, 30000u);
  EXPECT_LT(n, 80000u);
}

TEST(InitWeights, SameSeedIsBitIdentical) {
  Model<float> a(4), b(4);
  a.init_weights(42);
  b.init_weights(42);
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    for (std::size_t j = 0; j < pa[i].second->numel(); ++j) EXPECT_EQ(pa[i].second->at(j), pb[i].second->at(j));
  }
}

TEST(InitWeights, DifferentSeedsDiffer) {
  Model<float> a(4), b(4);
  a.init_weights(1);
  b.init_weights(2);
  auto pa = a.parameters(), pb = b.parameters();
  std::size_t differing = 0;
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].second->numel(); ++j) differing += pa[i].second->at(j) != pb[i].second->at(j);
  EXPECT_GT(differing, a.parameter_count() / 2);
}

TEST(InitWeights, MagnitudesWithinFanInBound) {
  Model<double> m(4);
  m.init_weights(9);
  double bound = 0;
  for (auto& [name, p] : m.parameters()) {
    if (name.ends_with(".weight")) {
      const auto& s = p->shape();
      double fan_in = 1;
      for (std::size_t i = 1; i < s.size(); ++i) fan_in *= double(s[i]);
      bound = 1.0 / std::sqrt(fan_in);
    }
    for (double v : p->values()) EXPECT_LE(std::abs(v), bound) << name;
  }
}

TEST(CameraNet, ZeroHeadsDecode) {
  const std::size_t H = 32, W = 64;
  const auto k = decode_intrinsics(TensorD::zeros({2}), TensorD::zeros({2}), H, W);
  EXPECT_NEAR(k.at(0), std::log(2.0) * W, 1e-12);
  EXPECT_NEAR(k.at(1), std::log(2.0) * H, 1e-12);
  EXPECT_EQ(k.at(2), W / 2.0);
  EXPECT_EQ(k.at(3), H / 2.0);
  const auto pose = se3_from_axis_angle(TensorD::zeros({3}), TensorD::zeros({3}), true);
  const auto r = pose_value(pose);
  EXPECT_EQ(r.rotation, Eigen::Matrix3d::Identity());
  EXPECT_EQ(r.translation, Eigen::Vector3d::Zero());
}

TEST(CameraNet, DecodeIsAlwaysValid) {
  const double extremes[] = {-1e4, -100, -30, -1, 0, 1, 30, 100, 1e4};
  for (double a : extremes)
    for (double b : extremes) {
      const auto kf = decode_intrinsics(Tensor<float>::from_data({2}, {float(a), float(b)}),
                                        Tensor<float>::from_data({2}, {float(b), float(a)}), 32, 96);
      EXPECT_TRUE(intrinsics_value(kf, 32, 96).valid()) << a << " " << b;
      const auto kd = decode_intrinsics(TensorD::from_data({2}, {a, b}), TensorD::from_data({2}, {b, a}), 32, 96);
      EXPECT_TRUE(intrinsics_value(kd, 32, 96).valid()) << a << " " << b;
    }
}

TEST(CameraNet, ZeroWeightsGiveIdentityPoses) {
  Model<double> m(2);
  m.init_weights(5);
  for (auto& [name, p] : m.parameters()) {
    if (name.starts_with("camera.pose") || name.starts_with("camera.focal") || name.starts_with("camera.principal")) {
      for (auto& v : p->mutable_values()) v = 0;
    }
  }
  std::mt19937_64 rng(3);
  auto a = random_tensor({3, 16, 24}, rng, 0, 1, false);
  auto b = random_tensor({3, 16, 24}, rng, 0, 1, false);
  auto c = random_tensor({3, 16, 24}, rng, 0, 1, false);
  const auto pred = m.predict_camera(a, b, c);
  for (const auto* pose : {&pred.pose_fwd, &pred.pose_bwd}) {
    const auto r = pose_value(*pose);
    EXPECT_EQ(r.rotation, Eigen::Matrix3d::Identity());
    EXPECT_EQ(r.translation, Eigen::Vector3d::Zero());
  }
  EXPECT_NEAR(pred.intrinsics.at(0), std::log(2.0) * 24, 1e-12);
  EXPECT_NEAR(pred.intrinsics.at(2), 12.0, 1e-12);
}

namespace {

struct GradFixture {
  Model<double> model{2};
  TensorD prev, target, next, pseudo;
  LossConfig cfg;

  GradFixture() {
    model.init_weights(17);
    std::mt19937_64 rng(18);
    prev = random_tensor({3, 16, 24}, rng, 0, 1, false);
    target = random_tensor({3, 16, 24}, rng, 0, 1, false);
    next = random_tensor({3, 16, 24}, rng, 0, 1, false);
    pseudo = random_tensor({16, 24}, rng, 0.1, 1, false);
    cfg.n_scales = 2;
    // Freshly initialized poses sit next to identity, where warped samples
    // land within a probe step of the pixel lattice and bilinear kinks
    // dominate the difference quotient. Push them into the interior.
    for (auto& [name, p] : model.parameters()) {
      if (name == "camera.pose.bias") {
        std::uniform_real_distribution<double> u(-5.0, 5.0);
        for (auto& v : p->mutable_values()) v = u(rng);
      }
    }
  }

  TensorD loss() {
    const auto cam = model.predict_camera(prev, target, next);
    LossInputs<double> in{target, prev, next, cam.pose_bwd, cam.pose_fwd, cam.intrinsics, pseudo};
    return total_loss(model.depth.forward(target), in, cfg).total;
  }

  std::vector<TensorD> params(const std::string& prefix) {
    std::vector<TensorD> out;
    for (auto& [name, p] : model.parameters())
      if (name.starts_with(prefix)) out.push_back(*p);
    return out;
  }
};

}  // namespace

TEST(Gradients, DepthNetWeights) {
  GradFixture f;
  const auto r = grad_check(f.params("depth."), [&] { return f.loss(); });
  EXPECT_TRUE(r.finite);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Gradients, CameraNetWeights) {
  GradFixture f;
  const auto r = grad_check(f.params("camera."), [&] { return f.loss(); });
  EXPECT_TRUE(r.finite);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

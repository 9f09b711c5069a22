#include <benchmark/benchmark.h>

#include <random>

#include "mdepth/geometry.hpp"
#include "mdepth/losses.hpp"
#include "mdepth/models.hpp"
#include "mdepth/ops.hpp"
#include "mdepth/synth.hpp"

using namespace mdepth;
using TF = Tensor<float>;

namespace {

TF random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return TF::from_data(std::move(shape), std::move(v), grad);
}

void BM_Conv2dForward(benchmark::State& state) {
  const std::size_t c = state.range(0);
  NoGradGuard ng;
  const auto x = random_tensor({c, 32, 48}, 1), w = random_tensor({c, c, 3, 3}, 2), b = random_tensor({c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1));
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
  const std::size_t c = state.range(0);
  auto x = random_tensor({c, 32, 48}, 1, true), w = random_tensor({c, c, 3, 3}, 2, true),
             b = random_tensor({c}, 3, true);
  for (auto _ : state) {
    sum(conv2d(x, w, b, 1, 1)).backward();
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(16)->Arg(32);

void BM_GridSample(benchmark::State& state) {
  NoGradGuard ng;
  const auto img = random_tensor({3, 64, 96}, 4);
  auto grid = identity_grid<float>(64, 96) * 0.97f;
  for (auto _ : state) benchmark::DoNotOptimize(grid_sample(img, grid));
}
BENCHMARK(BM_GridSample);

void BM_SsimForwardBackward(benchmark::State& state) {
  auto x = random_tensor({3, 64, 96}, 5, true), y = random_tensor({3, 64, 96}, 6);
  for (auto _ : state) {
    mean(ssim(x, y)).backward();
    x.zero_grad();
  }
}
BENCHMARK(BM_SsimForwardBackward);

void BM_DepthNetForward(benchmark::State& state) {
  Model<float> m(4);
  m.init_weights(1);
  NoGradGuard ng;
  const auto img = random_tensor({3, 64, 96}, 7);
  for (auto _ : state) benchmark::DoNotOptimize(m.depth.forward(img));
}
BENCHMARK(BM_DepthNetForward);

// One training sample at 64x96: both networks, the full loss and backward.
void BM_TrainSample(benchmark::State& state) {
  Model<float> m(4);
  m.init_weights(1);
  const auto scene = generate_scene(3, 64, 96);
  const auto r = render_triplet(scene);
  const auto tgt = image_tensor<float>(r.triplet.target), prv = image_tensor<float>(r.triplet.prev),
             nxt = image_tensor<float>(r.triplet.next);
  const auto& pd = *r.triplet.pseudo_disparity;
  const auto pseudo = TF::from_data({pd.height, pd.width}, pd.data);
  const auto k = intrinsics_tensor<float>(scene.gt_intrinsics);
  LossConfig cfg;
  for (auto _ : state) {
    const auto cam = m.predict_camera(prv, tgt, nxt);
    LossInputs<float> in{tgt, prv, nxt, cam.pose_bwd, cam.pose_fwd, k, pseudo};
    total_loss(m.depth.forward(tgt), in, cfg).total.backward();
    for (auto& [name, p] : m.parameters()) p->zero_grad();
  }
}
BENCHMARK(BM_TrainSample)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

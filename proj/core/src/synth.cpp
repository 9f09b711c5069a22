#include "mdepth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mdepth/ndtf.hpp"
#include "mdepth/ops.hpp"

namespace mdepth {

namespace fs = std::filesystem;

namespace {

// Value noise: uniform lattice values, smoothstep interpolation, random
// lattice phase so pixel centres rarely sit on lattice nodes.
class ValueNoise {
 public:
  ValueNoise(std::mt19937_64& rng, std::size_t height, std::size_t width, double cell) : cell_(cell) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    phase_r_ = u(rng);
    phase_c_ = u(rng);
    rows_ = static_cast<std::size_t>(std::ceil(double(height) / cell)) + 3;
    cols_ = static_cast<std::size_t>(std::ceil(double(width) / cell)) + 3;
    lattice_.resize(rows_ * cols_);
    for (auto& v : lattice_) v = u(rng);
  }

  double operator()(double r, double c) const {
    const double y = r / cell_ + phase_r_, x = c / cell_ + phase_c_;
    const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
    const double fy = smooth(y - double(y0)), fx = smooth(x - double(x0));
    auto at = [&](std::size_t i, std::size_t j) { return lattice_[i * cols_ + j]; };
    const double top = at(y0, x0) * (1 - fx) + at(y0, x0 + 1) * fx;
    const double bot = at(y0 + 1, x0) * (1 - fx) + at(y0 + 1, x0 + 1) * fx;
    return top * (1 - fy) + bot * fy;
  }

 private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }

  double cell_;
  double phase_r_ = 0, phase_c_ = 0;
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> lattice_;
};

Image image_from_tensor(const Tensor<double>& t) {
  Image img(t.dim(0), t.dim(1), t.dim(2));
  const auto v = t.values();
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(std::clamp(v[i], 0.0, 1.0));
  return img;
}

Tensor<double> texture_tensor(const Image& img) {
  return image_tensor<double>(img);
}

// Support frame for target->support pose `pose`, sampled from the texture
// at the preimage of each support pixel.
Tensor<double> render_support(const SyntheticScene& scene, const RigidPose& pose, Plane<std::uint8_t>& valid) {
  NoGradGuard ng;
  const std::size_t H = scene.gt_disparity.height, W = scene.gt_disparity.width;
  const auto disp = Tensor<double>::from_data({H, W}, scene.gt_disparity.data);
  const auto k = intrinsics_tensor<double>(scene.gt_intrinsics);
  const auto grid = project(backproject(reciprocal(disp), k), k, pose_tensor<double>(pose), H, W);
  const auto g = grid.values();
  const double sx = double(W - 1) / 2.0, sy = double(H - 1) / 2.0;
  std::vector<double> fu(H * W), fv(H * W);
  for (std::size_t i = 0; i < H * W; ++i) {
    fu[i] = (g[2 * i] + 1.0) * sx;
    fv[i] = (g[2 * i + 1] + 1.0) * sy;
  }
  auto warp = [&](double u, double v, double& ou, double& ov) {
    u = std::clamp(u, 0.0, double(W - 1));
    v = std::clamp(v, 0.0, double(H - 1));
    const auto x0 = std::min(static_cast<std::size_t>(u), W - 2), y0 = std::min(static_cast<std::size_t>(v), H - 2);
    const double ax = u - double(x0), ay = v - double(y0);
    auto lerp = [&](const std::vector<double>& f) {
      const double top = f[y0 * W + x0] * (1 - ax) + f[y0 * W + x0 + 1] * ax;
      const double bot = f[(y0 + 1) * W + x0] * (1 - ax) + f[(y0 + 1) * W + x0 + 1] * ax;
      return top * (1 - ay) + bot * ay;
    };
    ou = lerp(fu);
    ov = lerp(fv);
  };

  valid = Plane<std::uint8_t>(H, W, 0);
  std::vector<double> inv(H * W * 2);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const double qu = double(c), qv = double(r);
      double pu = qu, pv = qv, res = 0;
      for (int it = 0; it < 60; ++it) {
        double wu, wv;
        warp(pu, pv, wu, wv);
        const double du = qu - wu, dv = qv - wv;
        pu += du;
        pv += dv;
        res = std::hypot(du, dv);
        if (res < 1e-12) break;
      }
      const double tol = 1e-9;
      const bool inside = pu >= -tol && pu <= double(W - 1) + tol && pv >= -tol && pv <= double(H - 1) + tol;
      valid(r, c) = inside && res < 1e-6;
      const std::size_t i = r * W + c;
      inv[2 * i] = pu / sx - 1.0;
      inv[2 * i + 1] = pv / sy - 1.0;
    }
  return grid_sample(texture_tensor(scene.texture), Tensor<double>::from_data({H, W, 2}, std::move(inv)));
}

}  // namespace

SyntheticScene generate_scene(std::uint64_t seed, std::size_t H, std::size_t W, const SynthConfig& cfg) {
  if (H == 0 || W == 0 || H % 16 != 0 || W % 16 != 0) {
    throw std::invalid_argument("generate_scene: extents must be positive multiples of 16");
  }
  std::mt19937_64 rng(seed);
  SyntheticScene s;
  s.seed = seed;

  // Disparity: row ramp (nearer toward the bottom) plus coarse noise.
  const ValueNoise coarse(rng, H, W, double(W) / 3.3);
  const ValueNoise medium(rng, H, W, double(W) / 7.7);
  Plane<double> f(H, W);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const double ramp = double(r) / double(H - 1);
      f(r, c) = 0.55 * ramp + 0.3 * coarse(double(r), double(c)) + 0.15 * medium(double(r), double(c));
    }
  const auto [lo, hi] = std::minmax_element(f.data.begin(), f.data.end());
  const double flo = *lo, fspan = std::max(*hi - *lo, 1e-12);
  s.gt_disparity = Plane<double>(H, W);
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    f.data[i] = (f.data[i] - flo) / fspan;
    s.gt_disparity.data[i] = cfg.min_disparity + (cfg.max_disparity - cfg.min_disparity) * f.data[i];
  }

  // Albedo octaves per channel, shaded by normalized disparity.
  s.texture = Image(3, H, W);
  const double cells[] = {2.7, 5.3, 11.9};
  const double weights[] = {0.45, 0.35, 0.2};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    std::vector<ValueNoise> octaves;
    for (double cell : cells) octaves.emplace_back(rng, H, W, cell);
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        double a = 0;
        for (std::size_t o = 0; o < octaves.size(); ++o) a += weights[o] * octaves[o](double(r), double(c));
        const double albedo = 0.2 + 0.8 * a;
        const double shading = 0.35 + 0.65 * f(r, c);
        s.texture.at(ch, r, c) = static_cast<float>(std::clamp(albedo * shading, 0.0, 1.0));
      }
  }

  s.gt_intrinsics.fx = cfg.focal_fraction * double(W);
  s.gt_intrinsics.fy = cfg.focal_fraction * double(W);
  s.gt_intrinsics.cx = double(W) / 2.0;
  s.gt_intrinsics.cy = double(H) / 2.0;
  s.gt_intrinsics.width = W;
  s.gt_intrinsics.height = H;

  double mean_depth = 0;
  for (double d : s.gt_disparity.data) mean_depth += 1.0 / d;
  mean_depth /= double(s.gt_disparity.size());

  std::uniform_real_distribution<double> rot(-cfg.max_rotation, cfg.max_rotation);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> mag(cfg.min_translation, cfg.max_translation);
  Eigen::Vector3d aa(rot(rng), rot(rng), rot(rng));
  Eigen::Vector3d dir(gauss(rng), gauss(rng), gauss(rng));
  dir /= std::max(dir.norm(), 1e-12);
  const Eigen::Vector3d t = dir * mag(rng) * mean_depth;
  if (!cfg.zero_motion) {
    s.gt_pose_fwd = se3_from_axis_angle(aa, t);
    s.gt_pose_bwd = s.gt_pose_fwd.inverse();
  }
  return s;
}

RenderedTriplet render_triplet(const SyntheticScene& scene) {
  RenderedTriplet out;
  auto& t = out.triplet;
  t.target = scene.texture;
  t.prev = image_from_tensor(render_support(scene, scene.gt_pose_bwd, out.valid_prev));
  t.next = image_from_tensor(render_support(scene, scene.gt_pose_fwd, out.valid_next));
  Plane<float> pseudo(scene.gt_disparity.height, scene.gt_disparity.width);
  for (std::size_t i = 0; i < pseudo.size(); ++i) pseudo.data[i] = static_cast<float>(scene.gt_disparity.data[i]);
  t.pseudo_disparity = std::move(pseudo);
  t.known_intrinsics = scene.gt_intrinsics;
  t.source_id = scene_name(scene.seed);
  t.frame_index = 0;
  return out;
}

std::string scene_name(std::uint64_t seed) { return "scene_" + std::to_string(seed); }

void write_camera(const fs::path& path, const CameraRecord& rec) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os << std::setprecision(17);
  const auto& k = rec.intrinsics;
  os << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy << '\n';
  for (const RigidPose* p : {&rec.pose_fwd, &rec.pose_bwd}) {
    const auto aa = axis_angle_from_rotation(p->rotation);
    os << aa.x() << ' ' << aa.y() << ' ' << aa.z() << ' ' << p->translation.x() << ' ' << p->translation.y() << ' '
       << p->translation.z() << '\n';
  }
  if (!os) throw std::runtime_error(path.string() + ": write failed");
}

CameraRecord read_camera(const fs::path& path, std::size_t height, std::size_t width) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  CameraRecord rec;
  auto& k = rec.intrinsics;
  if (!(is >> k.fx >> k.fy >> k.cx >> k.cy)) throw std::runtime_error(path.string() + ": bad intrinsics line");
  k.width = width;
  k.height = height;
  for (RigidPose* p : {&rec.pose_fwd, &rec.pose_bwd}) {
    Eigen::Vector3d aa, t;
    if (!(is >> aa.x() >> aa.y() >> aa.z() >> t.x() >> t.y() >> t.z())) {
      throw std::runtime_error(path.string() + ": bad pose line");
    }
    *p = se3_from_axis_angle(aa, t);
  }
  try {
    k.validate();
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return rec;
}

void write_scene(const fs::path& dir, const SyntheticScene& scene, const RenderedTriplet& rendered) {
  fs::create_directories(dir);
  const auto& t = rendered.triplet;
  write_pnm16(dir / "target.ppm", t.target);
  write_pnm16(dir / "prev.ppm", t.prev);
  write_pnm16(dir / "next.ppm", t.next);
  const std::size_t H = scene.gt_disparity.height, W = scene.gt_disparity.width;
  std::vector<float> gt(scene.gt_disparity.data.begin(), scene.gt_disparity.data.end());
  save_ndtf(dir / "gt_disp.ndtf", Tensor<float>::from_data({H, W}, std::move(gt)));
  save_pseudo(dir / "pseudo_disp.pdsp", *t.pseudo_disparity);
  write_camera(dir / "camera.txt", {scene.gt_intrinsics, scene.gt_pose_fwd, scene.gt_pose_bwd});
}

void generate_archive(const fs::path& out_dir, std::size_t n_scenes, std::size_t height, std::size_t width,
                      std::uint64_t base_seed, const SynthConfig& cfg) {
  fs::create_directories(out_dir);
  std::ofstream manifest(out_dir / "manifest.txt");
  if (!manifest) throw std::runtime_error((out_dir / "manifest.txt").string() + ": cannot open for writing");
  for (std::size_t i = 0; i < n_scenes; ++i) {
    const auto seed = base_seed + i;
    const auto scene = generate_scene(seed, height, width, cfg);
    write_scene(out_dir / scene_name(seed), scene, render_triplet(scene));
    manifest << scene_name(seed) << " 0\n";
  }
  if (!manifest) throw std::runtime_error((out_dir / "manifest.txt").string() + ": write failed");
}

std::vector<ManifestEntry> read_manifest(const fs::path& data_dir) {
  const auto path = data_dir / "manifest.txt";
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.source_id >> e.frame_index)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 'source_id frame_index'");
    }
    out.push_back(e);
  }
  return out;
}

SceneSample load_scene(const fs::path& dir, const SceneLoadOptions& opts) {
  SceneSample s;
  auto& t = s.triplet;
  t.target = read_image(dir / "target.ppm");
  t.prev = read_image(dir / "prev.ppm");
  t.next = read_image(dir / "next.ppm");
  t.source_id = dir.filename().string();
  t.frame_index = 0;
  if (opts.pseudo) t.pseudo_disparity = load_pseudo(dir / "pseudo_disp.pdsp");
  if (opts.camera) {
    s.camera = read_camera(dir / "camera.txt", t.target.height, t.target.width);
    t.known_intrinsics = s.camera->intrinsics;
  }
  if (opts.ground_truth) {
    const auto gt = load_ndtf<float>(dir / "gt_disp.ndtf");
    if (gt.rank() != 2 || gt.dim(0) != t.target.height || gt.dim(1) != t.target.width) {
      throw std::runtime_error((dir / "gt_disp.ndtf").string() + ": shape differs from frames");
    }
    Plane<float> p(gt.dim(0), gt.dim(1));
    std::copy(gt.values().begin(), gt.values().end(), p.data.begin());
    s.gt_disparity = std::move(p);
  }
  t.validate();
  return s;
}

}  // namespace mdepth

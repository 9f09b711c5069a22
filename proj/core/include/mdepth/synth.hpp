#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mdepth/data.hpp"
#include "mdepth/geometry.hpp"
#include "mdepth/image_io.hpp"
#include "mdepth/plane.hpp"

namespace mdepth {

struct SynthConfig {
  double min_disparity = 0.1;
  double max_disparity = 1.0;
  double focal_fraction = 0.58;       // fx = fy = focal_fraction * W
  double min_translation = 0.03;      // fraction of mean depth
  double max_translation = 0.05;
  double max_rotation = 0.01;         // per axis-angle component, radians
  bool zero_motion = false;
};

struct SyntheticScene {
  Image texture;  // 3 x H x W
  Plane<double> gt_disparity;
  RigidPose gt_pose_fwd;  // target -> next
  RigidPose gt_pose_bwd;  // target -> prev
  CameraIntrinsics gt_intrinsics;
  std::uint64_t seed = 0;
};

/// Random scene: a row ramp plus smooth noise for disparity, octave value
/// noise for albedo, and a shading term that darkens distant surfaces so a
/// single image carries a depth cue. H and W must be multiples of 16.
SyntheticScene generate_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                              const SynthConfig& cfg = {});

struct RenderedTriplet {
  FrameTriplet triplet;  // pseudo_disparity and known_intrinsics filled from ground truth
  Plane<std::uint8_t> valid_prev;
  Plane<std::uint8_t> valid_next;
};

/// Renders the support frames by inverting the target-to-support warp per
/// support pixel (fixed-point iteration on the warp field) and sampling the
/// texture there. Pixels whose preimage leaves the frame or fails to
/// converge are marked invalid.
RenderedTriplet render_triplet(const SyntheticScene& scene);

/// Scene directory name for a seed: "scene_<seed>".
std::string scene_name(std::uint64_t seed);

/// Writes target/prev/next.ppm, gt_disp.ndtf, pseudo_disp.pdsp and
/// camera.txt into `dir` (created if missing).
void write_scene(const std::filesystem::path& dir, const SyntheticScene& scene, const RenderedTriplet& rendered);

struct ManifestEntry {
  std::string source_id;
  std::int64_t frame_index = 0;
};

/// n scenes with seeds base_seed, base_seed+1, ... plus a manifest.txt of
/// "source_id frame_index" lines.
void generate_archive(const std::filesystem::path& out_dir, std::size_t n_scenes, std::size_t height,
                      std::size_t width, std::uint64_t base_seed, const SynthConfig& cfg = {});

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& data_dir);

struct CameraRecord {
  CameraIntrinsics intrinsics;
  RigidPose pose_fwd;
  RigidPose pose_bwd;
};

void write_camera(const std::filesystem::path& path, const CameraRecord& rec);
CameraRecord read_camera(const std::filesystem::path& path, std::size_t height, std::size_t width);

struct SceneSample {
  FrameTriplet triplet;
  std::optional<Plane<float>> gt_disparity;
  std::optional<CameraRecord> camera;
};

struct SceneLoadOptions {
  bool pseudo = true;
  bool ground_truth = true;
  bool camera = true;
};

/// Loads one archived scene. Optional parts are read only when requested and
/// present; a requested but missing part is an error.
SceneSample load_scene(const std::filesystem::path& scene_dir, const SceneLoadOptions& opts = {});

}  // namespace mdepth

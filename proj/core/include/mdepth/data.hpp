#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mdepth/geometry.hpp"
#include "mdepth/image_io.hpp"
#include "mdepth/plane.hpp"

namespace mdepth {

struct FrameTriplet {
  Image prev;
  Image target;
  Image next;
  std::optional<Plane<float>> pseudo_disparity;
  std::optional<CameraIntrinsics> known_intrinsics;
  std::string source_id;
  std::int64_t frame_index = 0;

  /// Throws std::invalid_argument when frames or pseudo-labels disagree in
  /// shape.
  void validate() const;
};

/// Frame-index triple (t - stride, t, t + stride).
using TripletIndex = std::array<std::int64_t, 3>;

/// Triplets over a set of frame indices. Runs of consecutive indices form
/// segments; within a segment every t with both neighbours at `stride` is
/// emitted in ascending order. A segment of N frames yields
/// max(0, N - 2 stride) triplets.
std::vector<TripletIndex> plan_triplets(std::vector<std::int64_t> frame_indices, std::int64_t stride);

inline std::size_t segment_triplet_count(std::size_t frames, std::size_t stride) {
  return frames > 2 * stride ? frames - 2 * stride : 0;
}

/// One triplet of image files from a frame directory.
struct TripletFiles {
  std::string source_id;
  std::int64_t frame_index = 0;
  std::array<std::filesystem::path, 3> frames;  // prev, target, next
};

/// Scans `frame_dir` for .ppm/.pgm/.png files whose stem ends in a decimal
/// frame index and plans triplets over them. Fewer than three frames gives
/// an empty list and a logged warning.
std::vector<TripletFiles> extract_triplets(const std::filesystem::path& frame_dir, std::int64_t stride = 1);

FrameTriplet load_triplet(const TripletFiles& files);

struct JitterConfig {
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
  double hue = 0.05;
};

/// One random brightness/contrast/saturation/hue perturbation, drawn from
/// `seed`, applied identically to all three frames. Results are clamped to
/// [0,1]; a zero-magnitude config is an exact identity.
FrameTriplet color_jitter(const FrameTriplet& triplet, std::uint64_t seed, const JitterConfig& cfg = {});

/// Mirrors frames and pseudo-disparity left-right; cx <- W - 1 - cx.
FrameTriplet horizontal_flip(const FrameTriplet& triplet, bool apply);

struct AspectRatio {
  double width;
  double height;
};

struct AspectConfig {
  std::vector<AspectRatio> ratios{{16, 9}, {3, 1}, {2, 1}, {16, 5}, {4, 3}};
  std::size_t target_height = 192;
  std::size_t target_width = 640;
  std::size_t multiple = 32;
  double pixel_tolerance = 0.05;
};

/// Output extents for a given aspect ratio: multiples of `multiple` whose
/// pixel count is within tolerance of the target count, closest in aspect.
std::array<std::size_t, 2> aspect_output_size(const AspectRatio& ratio, const AspectConfig& cfg);

/// Largest centred crop of the source with the given aspect ratio, as
/// (y0, x0, h, w).
std::array<std::size_t, 4> aspect_crop(std::size_t height, std::size_t width, const AspectRatio& ratio);

/// Random aspect-ratio centre crop followed by bilinear resize. Known
/// intrinsics follow the pinhole transform: c' = s (c - crop offset).
FrameTriplet aspect_augment(const FrameTriplet& triplet, std::uint64_t seed, const AspectConfig& cfg = {});

/// Explicit-ratio variant used by aspect_augment.
FrameTriplet aspect_crop_resize(const FrameTriplet& triplet, const AspectRatio& ratio, const AspectConfig& cfg);

/// Pseudo-disparity record: "PDSP", u32 H, u32 W, f32 max, u16 payload with
/// q = round(d / max * 65535).
struct PseudoDisparityRecord {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  float max_value = 0.0f;
  std::vector<std::uint16_t> values;
};

PseudoDisparityRecord encode_pseudo(const Plane<float>& disparity);
Plane<float> decode_pseudo(const PseudoDisparityRecord& record);
void write_pseudo(std::ostream& os, const Plane<float>& disparity);
Plane<float> read_pseudo(std::istream& is);
void save_pseudo(const std::filesystem::path& path, const Plane<float>& disparity);
/// Counts a pseudo-label read in counters().
Plane<float> load_pseudo(const std::filesystem::path& path);

}  // namespace mdepth

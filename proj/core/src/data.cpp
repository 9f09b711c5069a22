#include "mdepth/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

#include "mdepth/instrumentation.hpp"
#include "mdepth/ndtf.hpp"
#include "mdepth/ops.hpp"

namespace mdepth {

namespace fs = std::filesystem;

void FrameTriplet::validate() const {
  if (!prev.same_shape(target) || !next.same_shape(target)) {
    throw std::invalid_argument("triplet " + source_id + ":" + std::to_string(frame_index) +
                                ": frames differ in shape");
  }
  if (pseudo_disparity && (pseudo_disparity->height != target.height || pseudo_disparity->width != target.width)) {
    throw std::invalid_argument("triplet " + source_id + ":" + std::to_string(frame_index) +
                                ": pseudo-disparity shape differs from frames");
  }
}

std::vector<TripletIndex> plan_triplets(std::vector<std::int64_t> idx, std::int64_t stride) {
  if (stride < 1) throw std::invalid_argument("plan_triplets: stride must be >= 1");
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  std::vector<TripletIndex> out;
  std::size_t seg_begin = 0;
  for (std::size_t i = 1; i <= idx.size(); ++i) {
    if (i < idx.size() && idx[i] == idx[i - 1] + 1) continue;
    // Segment [seg_begin, i) holds consecutive indices.
    const auto n = static_cast<std::int64_t>(i - seg_begin);
    for (std::int64_t k = stride; k + stride < n; ++k) {
      const auto t = idx[seg_begin + static_cast<std::size_t>(k)];
      out.push_back({t - stride, t, t + stride});
    }
    seg_begin = i;
  }
  return out;
}

namespace {

std::optional<std::int64_t> trailing_index(const std::string& stem) {
  std::size_t p = stem.size();
  while (p > 0 && std::isdigit(static_cast<unsigned char>(stem[p - 1]))) --p;
  if (p == stem.size()) return std::nullopt;
  return std::stoll(stem.substr(p));
}

bool is_frame_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ppm" || ext == ".pgm" || ext == ".png";
}

}  // namespace

std::vector<TripletFiles> extract_triplets(const fs::path& frame_dir, std::int64_t stride) {
  if (!fs::is_directory(frame_dir)) throw std::runtime_error(frame_dir.string() + ": not a directory");
  std::map<std::int64_t, fs::path> frames;
  for (const auto& entry : fs::directory_iterator(frame_dir)) {
    if (!entry.is_regular_file() || !is_frame_file(entry.path())) continue;
    if (auto i = trailing_index(entry.path().stem().string())) frames.emplace(*i, entry.path());
  }
  std::vector<TripletFiles> out;
  if (frames.size() < 3) {
    spdlog::warn("{}: {} frame(s) found, need at least 3 for a triplet", frame_dir.string(), frames.size());
    return out;
  }
  std::vector<std::int64_t> idx;
  for (const auto& [i, p] : frames) idx.push_back(i);
  const auto source = frame_dir.filename().string();
  for (const auto& t : plan_triplets(idx, stride)) {
    out.push_back({source, t[1], {frames.at(t[0]), frames.at(t[1]), frames.at(t[2])}});
  }
  return out;
}

FrameTriplet load_triplet(const TripletFiles& files) {
  FrameTriplet t;
  t.prev = read_image(files.frames[0]);
  t.target = read_image(files.frames[1]);
  t.next = read_image(files.frames[2]);
  t.source_id = files.source_id;
  t.frame_index = files.frame_index;
  t.validate();
  return t;
}

namespace {

void clamp01(Image& img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0f;
  if (d <= 0) {
    h = 0;
    return;
  }
  if (mx == r) {
    h = (g - b) / d;
  } else if (mx == g) {
    h = 2.0f + (b - r) / d;
  } else {
    h = 4.0f + (r - g) / d;
  }
  h /= 6.0f;
  if (h < 0) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const float h6 = h * 6.0f;
  const int i = static_cast<int>(std::floor(h6)) % 6;
  const float f = h6 - std::floor(h6);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

struct JitterDraw {
  std::optional<float> brightness, contrast, saturation, hue;
};

void apply_jitter(Image& img, const JitterDraw& d) {
  const std::size_t n = img.height * img.width;
  const bool rgb = img.channels == 3;
  if (d.brightness) {
    for (auto& v : img.data) v *= *d.brightness;
    clamp01(img);
  }
  if (d.contrast) {
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mean += rgb ? luma(img.data[i], img.data[n + i], img.data[2 * n + i]) : img.data[i];
    }
    const auto m = static_cast<float>(mean / double(n));
    for (auto& v : img.data) v = (v - m) * *d.contrast + m;
    clamp01(img);
  }
  if (rgb && d.saturation) {
    for (std::size_t i = 0; i < n; ++i) {
      const float g = luma(img.data[i], img.data[n + i], img.data[2 * n + i]);
      for (std::size_t c = 0; c < 3; ++c) img.data[c * n + i] = (img.data[c * n + i] - g) * *d.saturation + g;
    }
    clamp01(img);
  }
  if (rgb && d.hue) {
    for (std::size_t i = 0; i < n; ++i) {
      float h, s, v;
      rgb_to_hsv(img.data[i], img.data[n + i], img.data[2 * n + i], h, s, v);
      hsv_to_rgb(h + *d.hue, s, v, img.data[i], img.data[n + i], img.data[2 * n + i]);
    }
    clamp01(img);
  }
}

}  // namespace

FrameTriplet color_jitter(const FrameTriplet& triplet, std::uint64_t seed, const JitterConfig& cfg) {
  std::mt19937_64 rng(seed);
  auto factor = [&](double mag) -> std::optional<float> {
    if (mag <= 0) return std::nullopt;
    return static_cast<float>(std::uniform_real_distribution<double>(1.0 - mag, 1.0 + mag)(rng));
  };
  JitterDraw d;
  d.brightness = factor(cfg.brightness);
  d.contrast = factor(cfg.contrast);
  d.saturation = factor(cfg.saturation);
  if (cfg.hue > 0) d.hue = static_cast<float>(std::uniform_real_distribution<double>(-cfg.hue, cfg.hue)(rng));
  FrameTriplet out = triplet;
  for (Image* img : {&out.prev, &out.target, &out.next}) apply_jitter(*img, d);
  return out;
}

namespace {

void flip_image(Image& img) {
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t r = 0; r < img.height; ++r) {
      float* row = &img.data[(c * img.height + r) * img.width];
      std::reverse(row, row + img.width);
    }
}

}  // namespace

FrameTriplet horizontal_flip(const FrameTriplet& triplet, bool apply) {
  FrameTriplet out = triplet;
  if (!apply) return out;
  for (Image* img : {&out.prev, &out.target, &out.next}) flip_image(*img);
  if (out.pseudo_disparity) {
    auto& p = *out.pseudo_disparity;
    for (std::size_t r = 0; r < p.height; ++r) std::reverse(&p.data[r * p.width], &p.data[r * p.width] + p.width);
  }
  if (out.known_intrinsics) out.known_intrinsics->cx = double(triplet.target.width) - 1.0 - out.known_intrinsics->cx;
  return out;
}

std::array<std::size_t, 2> aspect_output_size(const AspectRatio& ratio, const AspectConfig& cfg) {
  const double target = double(cfg.target_height) * double(cfg.target_width);
  const double r = ratio.width / ratio.height;
  const std::size_t m = cfg.multiple;
  std::array<std::size_t, 2> best{0, 0};
  double best_err = std::numeric_limits<double>::infinity();
  const auto max_extent = static_cast<std::size_t>(std::sqrt(target * (1 + cfg.pixel_tolerance))) * 8;
  for (std::size_t h = m; h <= max_extent; h += m) {
    // Only the two widths bracketing the target count can qualify.
    const double w_ideal = target / double(h);
    for (std::size_t w : {std::size_t(std::floor(w_ideal / double(m))) * m, std::size_t(std::ceil(w_ideal / double(m))) * m}) {
      if (w == 0) continue;
      const double px = double(h) * double(w);
      if (std::abs(px - target) > cfg.pixel_tolerance * target) continue;
      const double err = std::abs(std::log(double(w) / double(h) / r));
      if (err < best_err) {
        best_err = err;
        best = {h, w};
      }
    }
  }
  if (best[0] == 0) throw std::invalid_argument("aspect_output_size: no admissible extents for this ratio");
  return best;
}

std::array<std::size_t, 4> aspect_crop(std::size_t height, std::size_t width, const AspectRatio& ratio) {
  const double r = ratio.width / ratio.height;
  std::size_t h = height, w = width;
  if (double(width) / double(height) > r) {
    w = static_cast<std::size_t>(std::lround(double(height) * r));
  } else {
    h = static_cast<std::size_t>(std::lround(double(width) / r));
  }
  if (h == 0 || w == 0 || h > height || w > width) {
    throw std::invalid_argument("aspect_crop: crop does not fit the source");
  }
  return {(height - h) / 2, (width - w) / 2, h, w};
}

namespace {

Image crop_resize(const Image& img, const std::array<std::size_t, 4>& crop, std::size_t oh, std::size_t ow) {
  const auto [y0, x0, h, w] = crop;
  std::vector<float> cropped(img.channels * h * w);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t x = 0; x < w; ++x) cropped[(c * h + r) * w + x] = img.at(c, y0 + r, x0 + x);
  NoGradGuard ng;
  const auto t = resize_bilinear(Tensor<float>::from_data({img.channels, h, w}, std::move(cropped)), oh, ow);
  Image out(img.channels, oh, ow);
  std::copy(t.values().begin(), t.values().end(), out.data.begin());
  return out;
}

}  // namespace

FrameTriplet aspect_crop_resize(const FrameTriplet& triplet, const AspectRatio& ratio, const AspectConfig& cfg) {
  const auto crop = aspect_crop(triplet.target.height, triplet.target.width, ratio);
  const auto [oh, ow] = aspect_output_size(ratio, cfg);
  FrameTriplet out = triplet;
  for (Image* img : {&out.prev, &out.target, &out.next}) *img = crop_resize(*img, crop, oh, ow);
  if (out.pseudo_disparity) {
    const auto& p = *out.pseudo_disparity;
    Image as_image(1, p.height, p.width);
    as_image.data = p.data;
    const auto r = crop_resize(as_image, crop, oh, ow);
    out.pseudo_disparity = Plane<float>(oh, ow);
    out.pseudo_disparity->data = r.data;
  }
  if (out.known_intrinsics) {
    // Corner-aligned resize maps crop pixel x to x (ow - 1) / (w - 1).
    const auto [y0, x0, h, w] = crop;
    const double sx = w > 1 ? double(ow - 1) / double(w - 1) : 1.0;
    const double sy = h > 1 ? double(oh - 1) / double(h - 1) : 1.0;
    auto& k = *out.known_intrinsics;
    k.fx *= sx;
    k.fy *= sy;
    k.cx = sx * (k.cx - double(x0));
    k.cy = sy * (k.cy - double(y0));
    k.width = ow;
    k.height = oh;
  }
  return out;
}

FrameTriplet aspect_augment(const FrameTriplet& triplet, std::uint64_t seed, const AspectConfig& cfg) {
  if (cfg.ratios.empty()) throw std::invalid_argument("aspect_augment: empty ratio set");
  std::mt19937_64 rng(seed);
  const auto pick = std::uniform_int_distribution<std::size_t>(0, cfg.ratios.size() - 1)(rng);
  return aspect_crop_resize(triplet, cfg.ratios[pick], cfg);
}

PseudoDisparityRecord encode_pseudo(const Plane<float>& d) {
  PseudoDisparityRecord rec;
  rec.height = static_cast<std::uint32_t>(d.height);
  rec.width = static_cast<std::uint32_t>(d.width);
  float mx = 0.0f;
  for (float v : d.data) {
    if (!(v >= 0.0f) || !std::isfinite(v)) throw std::invalid_argument("encode_pseudo: disparity must be finite and >= 0");
    mx = std::max(mx, v);
  }
  rec.max_value = mx;
  rec.values.resize(d.data.size(), 0);
  if (mx > 0.0f) {
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      const double q = std::round(double(d.data[i]) / double(mx) * 65535.0);
      rec.values[i] = static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
    }
  }
  return rec;
}

Plane<float> decode_pseudo(const PseudoDisparityRecord& rec) {
  Plane<float> out(rec.height, rec.width);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = static_cast<float>(double(rec.values[i]) / 65535.0 * double(rec.max_value));
  }
  return out;
}

void write_pseudo(std::ostream& os, const Plane<float>& disparity) {
  const auto rec = encode_pseudo(disparity);
  os.write("PDSP", 4);
  io::write_u32(os, rec.height);
  io::write_u32(os, rec.width);
  io::write_f32(os, rec.max_value);
  for (auto v : rec.values) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!os) throw std::runtime_error("write_pseudo: stream failure");
}

Plane<float> read_pseudo(std::istream& is) {
  io::expect_magic(is, "PDSP", "pseudo-disparity");
  PseudoDisparityRecord rec;
  rec.height = io::read_u32(is);
  rec.width = io::read_u32(is);
  rec.max_value = io::read_f32(is);
  if (!(rec.max_value >= 0.0f) || !std::isfinite(rec.max_value)) throw std::runtime_error("PDSP: bad max value");
  const std::size_t n = std::size_t(rec.height) * rec.width;
  std::vector<unsigned char> raw(n * 2);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) throw std::runtime_error("PDSP: truncated payload");
  rec.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) rec.values[i] = static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
  return decode_pseudo(rec);
}

void save_pseudo(const fs::path& path, const Plane<float>& disparity) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  write_pseudo(os, disparity);
}

Plane<float> load_pseudo(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  counters().pseudo_label_reads.fetch_add(1, std::memory_order_relaxed);
  try {
    return read_pseudo(is);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace mdepth

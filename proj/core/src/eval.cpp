#include "mdepth/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace mdepth {

CropFractions default_crop_fractions(CropKind kind) {
  switch (kind) {
    case CropKind::garg: return {0.40810811, 0.99189189, 0.03594771, 0.96405229};
    case CropKind::eigen: return {0.09689, 0.96163, 0.04063, 0.96438};
    case CropKind::center: return {0.25, 0.75, 0.25, 0.75};
    case CropKind::none: break;
  }
  return {};
}

void EvalProtocol::validate() const {
  if (!(min_depth > 0) || !(max_depth > min_depth)) {
    throw std::invalid_argument("EvalProtocol: need max_depth > min_depth > 0");
  }
  const auto& f = fractions;
  if (!(0 <= f.top && f.top < f.bottom && f.bottom <= 1 && 0 <= f.left && f.left < f.right && f.right <= 1)) {
    throw std::invalid_argument("EvalProtocol: crop fractions must satisfy 0 <= start < end <= 1");
  }
}

EvalProtocol EvalProtocol::make(Alignment alignment, CropKind crop, double max_depth) {
  EvalProtocol p;
  p.alignment = alignment;
  p.crop = crop;
  p.fractions = default_crop_fractions(crop);
  p.max_depth = max_depth;
  p.validate();
  return p;
}

Alignment parse_alignment(const std::string& name) {
  if (name == "median") return Alignment::median;
  if (name == "lsq" || name == "least_squares") return Alignment::least_squares;
  if (name == "none") return Alignment::none;
  throw std::invalid_argument("unknown alignment '" + name + "' (median | lsq | none)");
}

CropKind parse_crop(const std::string& name) {
  if (name == "none") return CropKind::none;
  if (name == "garg") return CropKind::garg;
  if (name == "eigen") return CropKind::eigen;
  if (name == "center") return CropKind::center;
  throw std::invalid_argument("unknown crop '" + name + "' (none | garg | eigen | center)");
}

std::string to_string(Alignment a) {
  switch (a) {
    case Alignment::median: return "median";
    case Alignment::least_squares: return "lsq";
    case Alignment::none: return "none";
  }
  return "?";
}

std::string to_string(CropKind c) {
  switch (c) {
    case CropKind::none: return "none";
    case CropKind::garg: return "garg";
    case CropKind::eigen: return "eigen";
    case CropKind::center: return "center";
  }
  return "?";
}

std::array<std::size_t, 4> crop_bounds(const CropFractions& f, std::size_t H, std::size_t W) {
  auto lo = [](double frac, std::size_t n) { return std::min(n, static_cast<std::size_t>(std::floor(frac * double(n)))); };
  auto hi = [](double frac, std::size_t n) { return std::min(n, static_cast<std::size_t>(std::ceil(frac * double(n)))); };
  return {lo(f.top, H), hi(f.bottom, H), lo(f.left, W), hi(f.right, W)};
}

Mask apply_crop(Mask mask, CropKind kind, const CropFractions& fractions) {
  if (kind == CropKind::none) return mask;
  const auto [r0, r1, c0, c1] = crop_bounds(fractions, mask.height, mask.width);
  for (std::size_t r = 0; r < mask.height; ++r)
    for (std::size_t c = 0; c < mask.width; ++c)
      if (r < r0 || r >= r1 || c < c0 || c >= c1) mask(r, c) = 0;
  return mask;
}

double masked_median(const Plane<double>& values, const Mask& mask) {
  require_same_shape(values, mask, "masked_median");
  std::vector<double> v;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (mask.data[i]) v.push_back(values.data[i]);
  if (v.empty()) throw std::invalid_argument("masked_median: empty mask");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double median_scale(const Plane<double>& pred, const Plane<double>& gt, const Mask& mask) {
  require_same_shape(pred, gt, "median_align");
  const double mp = masked_median(pred, mask);
  if (!(mp > 0)) throw std::invalid_argument("median_align: prediction median must be positive");
  return masked_median(gt, mask) / mp;
}

Plane<double> median_align(const Plane<double>& pred, const Plane<double>& gt, const Mask& mask) {
  const double s = median_scale(pred, gt, mask);
  Plane<double> out = pred;
  for (auto& v : out.data) v *= s;
  return out;
}

AffineFit lsq_fit(const Plane<double>& pred, const Plane<double>& gt, const Mask& mask) {
  require_same_shape(pred, gt, "lsq_align");
  require_same_shape(pred, mask, "lsq_align");
  // Centred sums keep the normal equations well conditioned.
  double n = 0, mp = 0, mg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask.data[i]) {
      n += 1;
      mp += pred.data[i];
      mg += gt.data[i];
    }
  if (n < 2) throw std::invalid_argument("lsq_align: need at least two valid pixels");
  mp /= n;
  mg /= n;
  double spp = 0, spg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask.data[i]) {
      const double dp = pred.data[i] - mp;
      spp += dp * dp;
      spg += dp * (gt.data[i] - mg);
    }
  if (!(spp > 1e-300) || !(spp > 1e-24 * n * std::max(1.0, mp * mp))) {
    throw std::invalid_argument("lsq_align: degenerate normal equations (constant prediction)");
  }
  AffineFit fit;
  fit.scale = spg / spp;
  fit.shift = mg - fit.scale * mp;
  return fit;
}

Plane<double> lsq_align(const Plane<double>& pred, const Plane<double>& gt, const Mask& mask) {
  const auto fit = lsq_fit(pred, gt, mask);
  Plane<double> out = pred;
  for (auto& v : out.data) v = fit.scale * v + fit.shift;
  return out;
}

MetricReport compute_metrics(const Plane<double>& pred, const Plane<double>& gt, const EvalProtocol& protocol) {
  return compute_metrics(pred, gt, protocol, Mask(gt.height, gt.width, 1));
}

MetricReport compute_metrics(const Plane<double>& pred_depth, const Plane<double>& gt, const EvalProtocol& protocol,
                             const Mask& input_mask) {
  protocol.validate();
  require_same_shape(pred_depth, gt, "compute_metrics");
  require_same_shape(gt, input_mask, "compute_metrics");
  Mask mask = apply_crop(input_mask, protocol.crop, protocol.fractions);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double g = gt.data[i];
    if (!(std::isfinite(g) && g > protocol.min_depth && g < protocol.max_depth)) mask.data[i] = 0;
  }
  std::size_t count = 0;
  for (auto m : mask.data) count += m != 0;
  if (count == 0) throw std::invalid_argument("compute_metrics: no valid pixels");

  Plane<double> pred = pred_depth;
  switch (protocol.alignment) {
    case Alignment::median:
      pred = median_align(pred_depth, gt, mask);
      break;
    case Alignment::least_squares: {
      Plane<double> pd(gt.height, gt.width), gd(gt.height, gt.width);
      for (std::size_t i = 0; i < gt.size(); ++i) {
        pd.data[i] = 1.0 / std::max(pred_depth.data[i], 1e-6);
        gd.data[i] = gt.data[i] > 0 ? 1.0 / gt.data[i] : 0.0;
      }
      const auto aligned = lsq_align(pd, gd, mask);
      for (std::size_t i = 0; i < gt.size(); ++i) pred.data[i] = 1.0 / std::max(aligned.data[i], 1e-6);
      break;
    }
    case Alignment::none:
      break;
  }

  MetricReport r;
  double a1 = 0, a2 = 0, a3 = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!mask.data[i]) continue;
    const double p = std::clamp(pred.data[i], protocol.min_depth, protocol.max_depth);
    const double g = gt.data[i];
    const double diff = p - g;
    r.abs_rel += std::abs(diff) / g;
    r.sq_rel += diff * diff / g;
    r.rms += diff * diff;
    const double dl = std::log(p) - std::log(g);
    r.rms_log += dl * dl;
    const double ratio = std::max(p / g, g / p);
    a1 += ratio < 1.25;
    a2 += ratio < 1.25 * 1.25;
    a3 += ratio < 1.25 * 1.25 * 1.25;
  }
  const double n = double(count);
  r.abs_rel /= n;
  r.sq_rel /= n;
  r.rms = std::sqrt(r.rms / n);
  r.rms_log = std::sqrt(r.rms_log / n);
  r.delta1 = a1 / n;
  r.delta2 = a2 / n;
  r.delta3 = a3 / n;
  r.valid_pixel_count = count;
  return r;
}

void MetricAccumulator::add(const MetricReport& r) {
  sum_.abs_rel += r.abs_rel;
  sum_.sq_rel += r.sq_rel;
  sum_.rms += r.rms;
  sum_.rms_log += r.rms_log;
  sum_.delta1 += r.delta1;
  sum_.delta2 += r.delta2;
  sum_.delta3 += r.delta3;
  sum_.valid_pixel_count += r.valid_pixel_count;
  ++n_;
}

MetricReport MetricAccumulator::mean() const {
  if (n_ == 0) throw std::logic_error("MetricAccumulator: no frames");
  MetricReport m = sum_;
  const double n = double(n_);
  for (double* v : {&m.abs_rel, &m.sq_rel, &m.rms, &m.rms_log, &m.delta1, &m.delta2, &m.delta3}) *v /= n;
  return m;
}

std::string metric_csv_row(const std::string& label, const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%zu", label.c_str(), r.abs_rel, r.sq_rel, r.rms,
                r.rms_log, r.delta1, r.delta2, r.delta3, r.valid_pixel_count);
  return buf;
}

void write_metric_table(std::ostream& os, const std::vector<std::pair<std::string, MetricReport>>& rows) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-18s %8s %8s %8s %8s %8s %8s %8s\n", "protocol", "AbsRel", "SqRel", "RMS", "RMSlog",
                "d1", "d2", "d3");
  os << buf;
  for (const auto& [label, r] : rows) {
    std::snprintf(buf, sizeof buf, "%-18s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f\n", label.c_str(), r.abs_rel,
                  r.sq_rel, r.rms, r.rms_log, r.delta1, r.delta2, r.delta3);
    os << buf;
  }
}

}  // namespace mdepth

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mdepth/plane.hpp"

namespace mdepth {

enum class Alignment { median, least_squares, none };
enum class CropKind { none, garg, eigen, center };

/// Crop window as fractions of the extents: rows [top*H, bottom*H),
/// cols [left*W, right*W). Starts round down, ends round up.
struct CropFractions {
  double top = 0, bottom = 1, left = 0, right = 1;
};

CropFractions default_crop_fractions(CropKind kind);

struct EvalProtocol {
  Alignment alignment = Alignment::median;
  double min_depth = 1e-3;
  double max_depth = 80.0;
  CropKind crop = CropKind::garg;
  CropFractions fractions = default_crop_fractions(CropKind::garg);

  void validate() const;
  static EvalProtocol make(Alignment alignment, CropKind crop, double max_depth);
};

Alignment parse_alignment(const std::string& name);
CropKind parse_crop(const std::string& name);
std::string to_string(Alignment a);
std::string to_string(CropKind c);

struct MetricReport {
  double abs_rel = 0;
  double sq_rel = 0;
  double rms = 0;
  double rms_log = 0;
  double delta1 = 0;
  double delta2 = 0;
  double delta3 = 0;
  std::size_t valid_pixel_count = 0;
};

using Mask = Plane<std::uint8_t>;

/// Row/column bounds [r0, r1) x [c0, c1) of a crop.
std::array<std::size_t, 4> crop_bounds(const CropFractions& f, std::size_t height, std::size_t width);

/// Clears mask entries outside the crop window. CropKind::none leaves the
/// mask unchanged.
Mask apply_crop(Mask mask, CropKind kind, const CropFractions& fractions);
inline Mask apply_crop(Mask mask, CropKind kind) { return apply_crop(std::move(mask), kind, default_crop_fractions(kind)); }

/// Median of the masked values; even counts average the two middle values.
double masked_median(const Plane<double>& values, const Mask& mask);

/// Scale median(gt[mask]) / median(pred[mask]). Throws on an empty mask.
double median_scale(const Plane<double>& pred_depth, const Plane<double>& gt_depth, const Mask& mask);
Plane<double> median_align(const Plane<double>& pred_depth, const Plane<double>& gt_depth, const Mask& mask);

struct AffineFit {
  double scale = 1;
  double shift = 0;
};

/// Closed-form least squares for s * pred + b ~ gt over the mask. Throws on
/// fewer than two pixels or a singular system.
AffineFit lsq_fit(const Plane<double>& pred_disp, const Plane<double>& gt_disp, const Mask& mask);
/// Aligned disparity s * pred + b.
Plane<double> lsq_align(const Plane<double>& pred_disp, const Plane<double>& gt_disp, const Mask& mask);

/// Aligns, clamps the prediction to [min_depth, max_depth] and reports over
/// pixels in mask ∧ crop ∧ (min_depth < gt < max_depth). Least-squares
/// alignment is fitted in disparity space and inverted with a 1e-6 floor.
MetricReport compute_metrics(const Plane<double>& pred_depth, const Plane<double>& gt_depth,
                             const EvalProtocol& protocol);
MetricReport compute_metrics(const Plane<double>& pred_depth, const Plane<double>& gt_depth,
                             const EvalProtocol& protocol, const Mask& mask);

/// Frame-averaged metrics; pixel counts are summed.
class MetricAccumulator {
 public:
  void add(const MetricReport& r);
  MetricReport mean() const;
  std::size_t frames() const { return n_; }

 private:
  MetricReport sum_;
  std::size_t n_ = 0;
};

inline constexpr const char* kMetricCsvHeader = "protocol,AbsRel,SqRel,RMS,RMS_log,delta1,delta2,delta3,valid_pixels";

std::string metric_csv_row(const std::string& label, const MetricReport& r);
void write_metric_table(std::ostream& os, const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace mdepth

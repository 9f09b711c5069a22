#pragma once

#include <vector>

#include "mdepth/geometry.hpp"
#include "mdepth/tensor.hpp"

namespace mdepth {

struct LossConfig {
  double alpha = 0.85;
  double lambda = 0.9;
  std::size_t n_scales = 4;
  double disparity_floor = 1e-4;
  bool use_min_reprojection = true;
  bool use_automask = true;
  bool multiscale_psl = true;

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
};

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Local SSIM map over 3x3 windows with edge-replicate padding; same shape as
/// the inputs (C,H,W).
template <typename T>
Tensor<T> ssim(const Tensor<T>& x, const Tensor<T>& y);

/// Per-pixel alpha/2 (1 - SSIM) + (1 - alpha) |x - y|, each averaged over
/// channels. Returns (H,W).
template <typename T>
Tensor<T> photometric_error(const Tensor<T>& target, const Tensor<T>& recon, double alpha);

/// Minimum-reprojection loss with optional auto-masking. The mask compares
/// the reduced warped error against the per-pixel minimum of the unwarped
/// errors and never carries gradient.
template <typename T>
Tensor<T> ssl_loss(const Tensor<T>& target, const Tensor<T>& prev, const Tensor<T>& next,
                   const Tensor<T>& recon_prev, const Tensor<T>& recon_next, const LossConfig& cfg);

/// Same as ssl_loss but with the unwarped error map supplied, so it can be
/// shared across scales. `identity_pe` is (H,W).
template <typename T>
Tensor<T> ssl_loss_with_identity(const Tensor<T>& target, const Tensor<T>& recon_prev,
                                 const Tensor<T>& recon_next, const Tensor<T>& identity_pe,
                                 const LossConfig& cfg);

/// min over the two unwarped errors pe(I_t, I_{t-1}), pe(I_t, I_{t+1}).
template <typename T>
Tensor<T> identity_error(const Tensor<T>& target, const Tensor<T>& prev, const Tensor<T>& next, double alpha);

inline constexpr double kSsiMinScale = 1e-6;

/// (d - median(d)) / max(mean|d - median(d)|, 1e-6), lower median.
template <typename T>
Tensor<T> ssi_normalize(const Tensor<T>& d);

/// mean |ssi(pred) - ssi(pseudo)|; `pseudo` is detached.
template <typename T>
Tensor<T> psl_loss(const Tensor<T>& pred, const Tensor<T>& pseudo);

/// Everything the total loss needs besides the disparity pyramid.
template <typename T>
struct LossInputs {
  Tensor<T> target;  // (3,H,W)
  Tensor<T> prev;
  Tensor<T> next;
  PoseTensor<T> pose_prev;  // target -> t-1
  PoseTensor<T> pose_next;  // target -> t+1
  Tensor<T> intrinsics;     // (4): fx, fy, cx, cy
  Tensor<T> pseudo;         // (H,W); may be undefined when lambda == 1
};

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double ssl = 0.0;  // scale-averaged SSL
  double psl = 0.0;  // scale-averaged PSL
};

/// (1/n) sum_i lambda SSL_i + (1 - lambda) PSL_i. Each pyramid level is
/// upsampled to the target resolution and floored before use. lambda == 1
/// never touches `pseudo`; lambda == 0 never synthesizes a view.
template <typename T>
LossTerms<T> total_loss(const std::vector<Tensor<T>>& pyramid, const LossInputs<T>& in, const LossConfig& cfg);

}  // namespace mdepth

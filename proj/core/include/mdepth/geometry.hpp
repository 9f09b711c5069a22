#pragma once

#include <Eigen/Core>

#include <cstddef>

#include "mdepth/tensor.hpp"

namespace mdepth {

/// Pinhole intrinsics in pixels. Pixel (u, v) = (column, row), origin at the
/// top-left pixel centre.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::size_t width = 1;
  std::size_t height = 1;

  bool valid() const;
  /// Throws std::invalid_argument when fx, fy <= 0 or the principal point
  /// lies outside [0, width) x [0, height).
  void validate() const;
};

Eigen::Matrix3d intrinsics_matrix(const CameraIntrinsics& k);

/// Rigid transform X' = R X + t.
struct RigidPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidPose identity() { return {}; }
  RigidPose inverse() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return rotation * x + translation; }
  /// Orthonormality and det(R) = +1, both to `tol`.
  bool valid(double tol = 1e-6) const;
};

/// this ∘ other: applies `other` first.
RigidPose compose(const RigidPose& a, const RigidPose& b);

/// Rodrigues rotation from an axis-angle vector. With `invert` the inverse
/// transform is returned (used for the t-1 support frame).
RigidPose se3_from_axis_angle(const Eigen::Vector3d& axis_angle, const Eigen::Vector3d& translation,
                              bool invert = false);
Eigen::Vector3d axis_angle_from_rotation(const Eigen::Matrix3d& r);

/// Differentiable pose: rotation (3,3) and translation (3).
template <typename T>
struct PoseTensor {
  Tensor<T> rotation;
  Tensor<T> translation;
};

template <typename T>
PoseTensor<T> se3_from_axis_angle(const Tensor<T>& axis_angle, const Tensor<T>& translation,
                                  bool invert = false);
template <typename T>
PoseTensor<T> pose_tensor(const RigidPose& pose);
template <typename T>
RigidPose pose_value(const PoseTensor<T>& pose);

/// (fx, fy, cx, cy) as a constant tensor of shape (4).
template <typename T>
Tensor<T> intrinsics_tensor(const CameraIntrinsics& k);

/// depth (H,W) -> homogeneous points (4, H*W):
/// X = depth * K^-1 (u, v, 1)^T with a trailing row of ones.
template <typename T>
Tensor<T> backproject(const Tensor<T>& depth, const Tensor<T>& intrinsics);

/// Minimum camera-frame z before the perspective divide.
inline constexpr double kMinProjectedDepth = 1e-3;

/// points (4, H*W) -> normalized sampling grid (H, W, 2) of K (R X + t).
template <typename T>
Tensor<T> project(const Tensor<T>& points, const Tensor<T>& intrinsics, const PoseTensor<T>& pose,
                  std::size_t height, std::size_t width);

/// Normalized identity lattice (H, W, 2): -1 at pixel 0, +1 at pixel extent-1.
template <typename T>
Tensor<T> identity_grid(std::size_t height, std::size_t width);

/// Reconstructs the target view from `source` (C,H,W) given target disparity
/// (H,W), the target-to-source pose and intrinsics.
template <typename T>
Tensor<T> synthesize_view(const Tensor<T>& source, const Tensor<T>& disparity, const PoseTensor<T>& pose,
                          const Tensor<T>& intrinsics);

}  // namespace mdepth

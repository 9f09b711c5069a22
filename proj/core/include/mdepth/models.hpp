#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mdepth/geometry.hpp"
#include "mdepth/tensor.hpp"

namespace mdepth {

/// 2-D convolution layer with its own weight (O,C,k,k) and bias (O).
template <typename T>
struct Conv {
  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 1;

  Conv() = default;
  Conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding);
  Tensor<T> operator()(const Tensor<T>& x) const;
  std::size_t fan_in() const { return weight.dim(1) * weight.dim(2) * weight.dim(3); }
};

/// Fully connected layer, weight (O,I), bias (O).
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out);
  Tensor<T> operator()(const Tensor<T>& x) const;  // x: (I) -> (O)
  std::size_t fan_in() const { return weight.dim(1); }
};

template <typename T>
using NamedParameters = std::vector<std::pair<std::string, Tensor<T>*>>;

/// Encoder-decoder emitting one ReLU disparity map per scale, finest first.
template <typename T>
class DepthNet {
 public:
  explicit DepthNet(std::size_t n_scales = 4);

  /// image (3,H,W) -> levels (H/2^k, W/2^k), k = 0..n_scales-1.
  /// Throws std::invalid_argument unless H and W are divisible by
  /// 2^(n_scales+1).
  std::vector<Tensor<T>> forward(const Tensor<T>& image) const;

  std::size_t n_scales() const { return n_scales_; }
  std::size_t divisor() const { return std::size_t{1} << (n_scales_ + 1); }
  void collect(NamedParameters<T>& out, const std::string& prefix);
  /// The per-scale output heads, for tests and initialization.
  std::vector<Conv<T>*> heads();

 private:
  std::size_t n_scales_;
  std::vector<Conv<T>> encoder_;
  std::vector<Conv<T>> pre_up_;
  std::vector<Conv<T>> fuse_;
  std::vector<Conv<T>> head_;
};

/// Raw head outputs of the camera network for one frame pair.
template <typename T>
struct CameraHeads {
  Tensor<T> axis_angle;   // (3), already scaled by 0.01
  Tensor<T> translation;  // (3), already scaled by 0.01
  Tensor<T> focal;        // (2) pre-activation
  Tensor<T> principal;    // (2) pre-activation
};

inline constexpr double kPoseScale = 0.01;

/// Pose and intrinsics regressor over a channel-stacked frame pair.
template <typename T>
class CameraNet {
 public:
  CameraNet();
  /// first, second: (3,H,W). Predicts the transform first -> second.
  CameraHeads<T> forward(const Tensor<T>& first, const Tensor<T>& second) const;
  void collect(NamedParameters<T>& out, const std::string& prefix);

 private:
  std::vector<Conv<T>> encoder_;
  Linear<T> pose_;
  Linear<T> focal_;
  Linear<T> principal_;
};

/// fx = softplus(f0) W, fy = softplus(f1) H, cx = sigmoid(c0) W,
/// cy = sigmoid(c1) H, clamped so the result always satisfies the
/// intrinsics invariants. Returns (4): fx, fy, cx, cy.
template <typename T>
Tensor<T> decode_intrinsics(const Tensor<T>& focal, const Tensor<T>& principal, std::size_t height,
                            std::size_t width);

template <typename T>
CameraIntrinsics intrinsics_value(const Tensor<T>& k, std::size_t height, std::size_t width);

template <typename T>
struct CameraPrediction {
  PoseTensor<T> pose_fwd;  // t -> t+1
  PoseTensor<T> pose_bwd;  // t -> t-1
  Tensor<T> intrinsics;    // (4), mean of the two pair estimates
};

template <typename T>
struct Model {
  explicit Model(std::size_t n_scales = 4) : depth(n_scales) {}

  DepthNet<T> depth;
  CameraNet<T> camera;

  /// Stable name -> parameter table; order fixes initialization and
  /// checkpoint layout.
  NamedParameters<T> parameters();
  std::size_t parameter_count();

  /// Deterministic fan-in uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  /// for every weight and bias, drawn in parameter-table order. Disparity
  /// head biases are set to the positive bound so initial outputs are
  /// mostly non-zero; focal and principal heads are zeroed.
  void init_weights(std::uint64_t seed);

  /// Runs the camera network on (prev, target) and (target, next).
  CameraPrediction<T> predict_camera(const Tensor<T>& prev, const Tensor<T>& target, const Tensor<T>& next) const;
};

}  // namespace mdepth

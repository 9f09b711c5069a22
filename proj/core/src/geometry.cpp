#include "mdepth/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

#include "mdepth/instrumentation.hpp"
#include "mdepth/ops.hpp"

namespace mdepth {

Counters& counters() {
  static Counters c;
  return c;
}

bool CameraIntrinsics::valid() const {
  return fx > 0 && fy > 0 && cx >= 0 && cx < static_cast<double>(width) && cy >= 0 &&
         cy < static_cast<double>(height);
}

void CameraIntrinsics::validate() const {
  if (!valid()) {
    throw std::invalid_argument("invalid intrinsics: fx=" + std::to_string(fx) + " fy=" + std::to_string(fy) +
                                " cx=" + std::to_string(cx) + " cy=" + std::to_string(cy) + " for " +
                                std::to_string(width) + "x" + std::to_string(height));
  }
}

Eigen::Matrix3d intrinsics_matrix(const CameraIntrinsics& k) {
  Eigen::Matrix3d m;
  m << k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0;
  return m;
}

RigidPose RigidPose::inverse() const {
  RigidPose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

bool RigidPose::valid(double tol) const {
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

RigidPose compose(const RigidPose& a, const RigidPose& b) {
  RigidPose out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

RigidPose se3_from_axis_angle(const Eigen::Vector3d& axis_angle, const Eigen::Vector3d& translation,
                              bool invert) {
  const double theta2 = axis_angle.squaredNorm();
  double a, b;
  if (theta2 < 1e-8) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  Eigen::Matrix3d k;
  k << 0.0, -axis_angle.z(), axis_angle.y(), axis_angle.z(), 0.0, -axis_angle.x(), -axis_angle.y(),
      axis_angle.x(), 0.0;
  RigidPose pose;
  pose.rotation = Eigen::Matrix3d::Identity() + a * k + b * k * k;
  pose.translation = translation;
  return invert ? pose.inverse() : pose;
}

Eigen::Vector3d axis_angle_from_rotation(const Eigen::Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

template <typename T>
PoseTensor<T> se3_from_axis_angle(const Tensor<T>& axis_angle, const Tensor<T>& translation, bool invert) {
  if (axis_angle.numel() != 3 || translation.numel() != 3) {
    throw TensorError("se3_from_axis_angle: expected 3-vectors");
  }
  // vec(skew(w)) = S w, with S a fixed 9x3 selector.
  static const std::vector<T> selector = {0, 0, 0, 0, 0, -1, 0, 1, 0,   //
                                          0, 0, 1, 0, 0, 0,  -1, 0, 0,  //
                                          0, -1, 0, 1, 0, 0, 0, 0, 0};
  const auto s = Tensor<T>::from_data({9, 3}, selector);
  const auto w = reshape(axis_angle, {3, 1});
  const auto skew = reshape(matmul(s, w), {3, 3});
  const auto theta2 = sum(square(axis_angle));
  const auto eye = Tensor<T>::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto rotation = eye + sinc_sqrt(theta2) * skew + cosc_sqrt(theta2) * matmul(skew, skew);
  auto t = reshape(translation, {3});
  if (!invert) return {rotation, t};
  auto rt = transpose(rotation);
  return {rt, neg(reshape(matmul(rt, reshape(t, {3, 1})), {3}))};
}

template <typename T>
PoseTensor<T> pose_tensor(const RigidPose& pose) {
  std::vector<T> r(9), t(3);
  for (int i = 0; i < 3; ++i) {
    t[i] = static_cast<T>(pose.translation(i));
    for (int j = 0; j < 3; ++j) r[i * 3 + j] = static_cast<T>(pose.rotation(i, j));
  }
  return {Tensor<T>::from_data({3, 3}, std::move(r)), Tensor<T>::from_data({3}, std::move(t))};
}

template <typename T>
RigidPose pose_value(const PoseTensor<T>& pose) {
  RigidPose out;
  const auto r = pose.rotation.values();
  const auto t = pose.translation.values();
  for (int i = 0; i < 3; ++i) {
    out.translation(i) = t[i];
    for (int j = 0; j < 3; ++j) out.rotation(i, j) = r[i * 3 + j];
  }
  return out;
}

template <typename T>
Tensor<T> intrinsics_tensor(const CameraIntrinsics& k) {
  return Tensor<T>::from_data({4}, {static_cast<T>(k.fx), static_cast<T>(k.fy), static_cast<T>(k.cx),
                                    static_cast<T>(k.cy)});
}

template <typename T>
Tensor<T> backproject(const Tensor<T>& depth, const Tensor<T>& intrinsics) {
  if (depth.rank() != 2) throw TensorError("backproject: depth must be (H,W)");
  if (intrinsics.numel() != 4) throw TensorError("backproject: intrinsics must hold (fx,fy,cx,cy)");
  const std::size_t H = depth.dim(0), W = depth.dim(1), N = H * W;
  const auto d = depth.values();
  const auto k = intrinsics.values();
  const T fx = k[0], fy = k[1], cx = k[2], cy = k[3];
  std::vector<T> out(4 * N);
  for (std::size_t v = 0; v < H; ++v)
    for (std::size_t u = 0; u < W; ++u) {
      const std::size_t p = v * W + u;
      out[p] = d[p] * (static_cast<T>(u) - cx) / fx;
      out[N + p] = d[p] * (static_cast<T>(v) - cy) / fy;
      out[2 * N + p] = d[p];
      out[3 * N + p] = T(1);
    }
  return make_result<T>({4, N}, std::move(out), {depth, intrinsics}, [H, W, N](detail::Node<T>& o) {
    const auto& d = o.inputs[0]->value;
    const auto& k = o.inputs[1]->value;
    const T fx = k[0], fy = k[1], cx = k[2], cy = k[3];
    auto* gd = grad_target(o, 0);
    auto* gk = grad_target(o, 1);
    double gfx = 0, gfy = 0, gcx = 0, gcy = 0;
    for (std::size_t v = 0; v < H; ++v)
      for (std::size_t u = 0; u < W; ++u) {
        const std::size_t p = v * W + u;
        const T gx = o.grad[p], gy = o.grad[N + p], gz = o.grad[2 * N + p];
        const T ux = (static_cast<T>(u) - cx) / fx, vy = (static_cast<T>(v) - cy) / fy;
        if (gd) (*gd)[p] += gx * ux + gy * vy + gz;
        if (gk) {
          gfx -= gx * d[p] * ux / fx;
          gfy -= gy * d[p] * vy / fy;
          gcx -= gx * d[p] / fx;
          gcy -= gy * d[p] / fy;
        }
      }
    if (gk) {
      (*gk)[0] += static_cast<T>(gfx);
      (*gk)[1] += static_cast<T>(gfy);
      (*gk)[2] += static_cast<T>(gcx);
      (*gk)[3] += static_cast<T>(gcy);
    }
  });
}

template <typename T>
Tensor<T> project(const Tensor<T>& points, const Tensor<T>& intrinsics, const PoseTensor<T>& pose,
                  std::size_t height, std::size_t width) {
  const std::size_t N = height * width;
  if (points.rank() != 2 || points.dim(0) != 4 || points.dim(1) != N) {
    throw TensorError("project: points must be (4, H*W), got " + shape_to_string(points.shape()));
  }
  if (intrinsics.numel() != 4 || pose.rotation.numel() != 9 || pose.translation.numel() != 3) {
    throw TensorError("project: bad intrinsics or pose");
  }
  const T zmin = static_cast<T>(kMinProjectedDepth);
  const T nx = T(2) / static_cast<T>(width - 1 > 0 ? width - 1 : 1);
  const T ny = T(2) / static_cast<T>(height - 1 > 0 ? height - 1 : 1);
  const auto x = points.values();
  const auto k = intrinsics.values();
  const auto r = pose.rotation.values();
  const auto t = pose.translation.values();
  std::vector<T> out(2 * N);
  for (std::size_t p = 0; p < N; ++p) {
    const T X = x[p], Y = x[N + p], Z = x[2 * N + p];
    const T px = r[0] * X + r[1] * Y + r[2] * Z + t[0];
    const T py = r[3] * X + r[4] * Y + r[5] * Z + t[1];
    const T pz = r[6] * X + r[7] * Y + r[8] * Z + t[2];
    const T z = pz < zmin ? zmin : pz;
    const T u = (k[0] * px + k[2] * pz) / z;
    const T v = (k[1] * py + k[3] * pz) / z;
    out[2 * p] = u * nx - T(1);
    out[2 * p + 1] = v * ny - T(1);
  }
  return make_result<T>(
      {height, width, 2}, std::move(out), {points, intrinsics, pose.rotation, pose.translation},
      [N, zmin, nx, ny](detail::Node<T>& o) {
        const auto& x = o.inputs[0]->value;
        const auto& k = o.inputs[1]->value;
        const auto& r = o.inputs[2]->value;
        const auto& t = o.inputs[3]->value;
        auto* gp = grad_target(o, 0);
        auto* gk = grad_target(o, 1);
        auto* gr = grad_target(o, 2);
        auto* gt = grad_target(o, 3);
        double acc_k[4] = {0, 0, 0, 0}, acc_r[9] = {}, acc_t[3] = {};
        for (std::size_t p = 0; p < N; ++p) {
          const T X = x[p], Y = x[N + p], Z = x[2 * N + p];
          const T px = r[0] * X + r[1] * Y + r[2] * Z + t[0];
          const T py = r[3] * X + r[4] * Y + r[5] * Z + t[1];
          const T pz = r[6] * X + r[7] * Y + r[8] * Z + t[2];
          const bool clamped = pz < zmin;
          const T z = clamped ? zmin : pz;
          const T a = k[0] * px + k[2] * pz;
          const T b = k[1] * py + k[3] * pz;
          // Upstream grads w.r.t. pixel coordinates.
          const T gu = o.grad[2 * p] * nx;
          const T gv = o.grad[2 * p + 1] * ny;
          const T ga = gu / z, gb = gv / z;
          const T gz = clamped ? T(0) : -(gu * a + gv * b) / (z * z);
          const T gpx = ga * k[0];
          const T gpy = gb * k[1];
          const T gpz = ga * k[2] + gb * k[3] + gz;
          if (gk) {
            acc_k[0] += ga * px;
            acc_k[1] += gb * py;
            acc_k[2] += ga * pz;
            acc_k[3] += gb * pz;
          }
          if (gr) {
            const T gP[3] = {gpx, gpy, gpz};
            const T Xs[3] = {X, Y, Z};
            for (int i = 0; i < 3; ++i)
              for (int j = 0; j < 3; ++j) acc_r[i * 3 + j] += gP[i] * Xs[j];
          }
          if (gt) {
            acc_t[0] += gpx;
            acc_t[1] += gpy;
            acc_t[2] += gpz;
          }
          if (gp) {
            (*gp)[p] += r[0] * gpx + r[3] * gpy + r[6] * gpz;
            (*gp)[N + p] += r[1] * gpx + r[4] * gpy + r[7] * gpz;
            (*gp)[2 * N + p] += r[2] * gpx + r[5] * gpy + r[8] * gpz;
          }
        }
        if (gk)
          for (int i = 0; i < 4; ++i) (*gk)[i] += static_cast<T>(acc_k[i]);
        if (gr)
          for (int i = 0; i < 9; ++i) (*gr)[i] += static_cast<T>(acc_r[i]);
        if (gt)
          for (int i = 0; i < 3; ++i) (*gt)[i] += static_cast<T>(acc_t[i]);
      });
}

template <typename T>
Tensor<T> identity_grid(std::size_t height, std::size_t width) {
  const T nx = T(2) / static_cast<T>(width - 1 > 0 ? width - 1 : 1);
  const T ny = T(2) / static_cast<T>(height - 1 > 0 ? height - 1 : 1);
  std::vector<T> g(height * width * 2);
  for (std::size_t v = 0; v < height; ++v)
    for (std::size_t u = 0; u < width; ++u) {
      g[2 * (v * width + u)] = static_cast<T>(u) * nx - T(1);
      g[2 * (v * width + u) + 1] = static_cast<T>(v) * ny - T(1);
    }
  return Tensor<T>::from_data({height, width, 2}, std::move(g));
}

template <typename T>
Tensor<T> synthesize_view(const Tensor<T>& source, const Tensor<T>& disparity, const PoseTensor<T>& pose,
                          const Tensor<T>& intrinsics) {
  if (source.rank() != 3 || disparity.rank() != 2 || source.dim(1) != disparity.dim(0) ||
      source.dim(2) != disparity.dim(1)) {
    throw TensorError("synthesize_view: source " + shape_to_string(source.shape()) + " vs disparity " +
                      shape_to_string(disparity.shape()));
  }
  counters().views_synthesized.fetch_add(1, std::memory_order_relaxed);
  const auto depth = reciprocal(disparity);
  const auto points = backproject(depth, intrinsics);
  const auto grid = project(points, intrinsics, pose, disparity.dim(0), disparity.dim(1));
  return grid_sample(source, grid);
}

#define MDEPTH_INSTANTIATE_GEOMETRY(T)                                                              \
  template PoseTensor<T> se3_from_axis_angle(const Tensor<T>&, const Tensor<T>&, bool);             \
  template PoseTensor<T> pose_tensor<T>(const RigidPose&);                                          \
  template RigidPose pose_value(const PoseTensor<T>&);                                              \
  template Tensor<T> intrinsics_tensor<T>(const CameraIntrinsics&);                                 \
  template Tensor<T> backproject(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> project(const Tensor<T>&, const Tensor<T>&, const PoseTensor<T>&, std::size_t, \
                             std::size_t);                                                          \
  template Tensor<T> identity_grid<T>(std::size_t, std::size_t);                                    \
  template Tensor<T> synthesize_view(const Tensor<T>&, const Tensor<T>&, const PoseTensor<T>&,      \
                                     const Tensor<T>&);

MDEPTH_INSTANTIATE_GEOMETRY(float)
MDEPTH_INSTANTIATE_GEOMETRY(double)

}  // namespace mdepth

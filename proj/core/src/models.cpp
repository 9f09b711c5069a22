#include "mdepth/models.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "mdepth/ops.hpp"

namespace mdepth {

namespace {

// Encoder widths per stage and decoder widths per output scale.
std::size_t encoder_channels(std::size_t stage) { return 8 * (stage + 1); }
std::size_t decoder_channels(std::size_t scale) {
  static const std::size_t widths[] = {8, 12, 16, 24};
  return scale < 4 ? widths[scale] : 24;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename T>
Conv<T>::Conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t padding_)
    : weight(Tensor<T>::zeros({out, in, kernel, kernel}, true)),
      bias(Tensor<T>::zeros({out}, true)),
      stride(stride_),
      padding(padding_) {}

template <typename T>
Tensor<T> Conv<T>::operator()(const Tensor<T>& x) const {
  return conv2d(x, weight, bias, stride, padding);
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out)
    : weight(Tensor<T>::zeros({out, in}, true)), bias(Tensor<T>::zeros({out}, true)) {}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  const std::size_t in = weight.dim(1), out = weight.dim(0);
  return reshape(matmul(weight, reshape(x, {in, 1})), {out}) + bias;
}

template <typename T>
DepthNet<T>::DepthNet(std::size_t n_scales) : n_scales_(n_scales) {
  if (n_scales < 1) throw std::invalid_argument("DepthNet: n_scales must be >= 1");
  std::size_t in = 3;
  for (std::size_t s = 0; s < n_scales; ++s) {
    encoder_.emplace_back(in, encoder_channels(s), 3, 2, 1);
    in = encoder_channels(s);
  }
  pre_up_.resize(n_scales);
  fuse_.resize(n_scales);
  head_.resize(n_scales);
  for (std::size_t k = n_scales; k-- > 0;) {
    const std::size_t c = decoder_channels(k);
    pre_up_[k] = Conv<T>(in, c, 3, 1, 1);
    const std::size_t skip = k > 0 ? encoder_channels(k - 1) : 3;
    fuse_[k] = Conv<T>(c + skip, c, 3, 1, 1);
    head_[k] = Conv<T>(c, 1, 3, 1, 1);
    in = c;
  }
}

template <typename T>
std::vector<Tensor<T>> DepthNet<T>::forward(const Tensor<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("DepthNet: expected a (3,H,W) image, got " + shape_to_string(image.shape()));
  }
  const std::size_t H = image.dim(1), W = image.dim(2);
  if (H % divisor() != 0 || W % divisor() != 0) {
    throw std::invalid_argument("DepthNet: image extents " + std::to_string(H) + "x" + std::to_string(W) +
                                " must be divisible by " + std::to_string(divisor()));
  }
  std::vector<Tensor<T>> skips;
  Tensor<T> x = image;
  for (const auto& conv : encoder_) {
    x = elu(conv(x));
    skips.push_back(x);
  }
  std::vector<Tensor<T>> levels(n_scales_);
  for (std::size_t k = n_scales_; k-- > 0;) {
    const std::size_t h = H >> k, w = W >> k;
    x = resize_bilinear(elu(pre_up_[k](x)), h, w);
    x = concat<T>({x, k > 0 ? skips[k - 1] : image}, 0);
    x = elu(fuse_[k](x));
    levels[k] = reshape(relu(head_[k](x)), {h, w});
  }
  return levels;
}

template <typename T>
void DepthNet<T>::collect(NamedParameters<T>& out, const std::string& prefix) {
  auto add = [&](Conv<T>& c, const std::string& name) {
    out.emplace_back(prefix + name + ".weight", &c.weight);
    out.emplace_back(prefix + name + ".bias", &c.bias);
  };
  for (std::size_t s = 0; s < encoder_.size(); ++s) add(encoder_[s], "enc" + std::to_string(s));
  for (std::size_t k = n_scales_; k-- > 0;) {
    add(pre_up_[k], "up" + std::to_string(k));
    add(fuse_[k], "fuse" + std::to_string(k));
    add(head_[k], "head" + std::to_string(k));
  }
}

template <typename T>
std::vector<Conv<T>*> DepthNet<T>::heads() {
  std::vector<Conv<T>*> out;
  for (auto& h : head_) out.push_back(&h);
  return out;
}

template <typename T>
CameraNet<T>::CameraNet() : pose_(32, 6), focal_(32, 2), principal_(32, 2) {
  const std::size_t widths[] = {8, 16, 24, 32};
  std::size_t in = 6;
  for (std::size_t w : widths) {
    encoder_.emplace_back(in, w, 3, 2, 1);
    in = w;
  }
}

template <typename T>
CameraHeads<T> CameraNet<T>::forward(const Tensor<T>& first, const Tensor<T>& second) const {
  if (first.shape() != second.shape() || first.rank() != 3 || first.dim(0) != 3) {
    throw std::invalid_argument("CameraNet: frames must share a (3,H,W) shape");
  }
  Tensor<T> x = concat<T>({first, second}, 0);
  for (const auto& conv : encoder_) x = elu(conv(x));
  const auto feat = mean_axis(mean_axis(x, 2), 1);
  const auto pose = pose_(feat) * static_cast<T>(kPoseScale);
  return {slice(pose, 0, 0, 3), slice(pose, 0, 3, 3), focal_(feat), principal_(feat)};
}

template <typename T>
void CameraNet<T>::collect(NamedParameters<T>& out, const std::string& prefix) {
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    out.emplace_back(prefix + "enc" + std::to_string(s) + ".weight", &encoder_[s].weight);
    out.emplace_back(prefix + "enc" + std::to_string(s) + ".bias", &encoder_[s].bias);
  }
  out.emplace_back(prefix + "pose.weight", &pose_.weight);
  out.emplace_back(prefix + "pose.bias", &pose_.bias);
  out.emplace_back(prefix + "focal.weight", &focal_.weight);
  out.emplace_back(prefix + "focal.bias", &focal_.bias);
  out.emplace_back(prefix + "principal.weight", &principal_.weight);
  out.emplace_back(prefix + "principal.bias", &principal_.bias);
}

template <typename T>
Tensor<T> decode_intrinsics(const Tensor<T>& focal, const Tensor<T>& principal, std::size_t height,
                            std::size_t width) {
  const T w = static_cast<T>(width), h = static_cast<T>(height);
  const auto extent = Tensor<T>::from_data({2}, {w, h});
  const auto f = maximum(softplus(focal) * extent, Tensor<T>::from_data({2}, {T(1e-3) * w, T(1e-3) * h}));
  const T keep = T(1) - T(1e-6);
  const auto c = minimum(sigmoid(principal) * extent, Tensor<T>::from_data({2}, {keep * w, keep * h}));
  return concat<T>({f, c}, 0);
}

template <typename T>
CameraIntrinsics intrinsics_value(const Tensor<T>& k, std::size_t height, std::size_t width) {
  CameraIntrinsics out;
  out.fx = k.at(0);
  out.fy = k.at(1);
  out.cx = k.at(2);
  out.cy = k.at(3);
  out.width = width;
  out.height = height;
  return out;
}

template <typename T>
NamedParameters<T> Model<T>::parameters() {
  NamedParameters<T> out;
  depth.collect(out, "depth.");
  camera.collect(out, "camera.");
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() {
  std::size_t n = 0;
  for (auto& [name, p] : parameters()) n += p->numel();
  return n;
}

template <typename T>
void Model<T>::init_weights(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double bound = 0.0;
  for (auto& [name, p] : parameters()) {
    if (ends_with(name, ".weight")) {
      const auto& s = p->shape();
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < s.size(); ++i) fan_in *= s[i];
      bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    }
    std::uniform_real_distribution<double> u(-bound, bound);
    auto v = p->mutable_values();
    for (auto& x : v) x = static_cast<T>(u(rng));
    if (name.starts_with("depth.head") && ends_with(name, ".bias")) {
      for (auto& x : v) x = static_cast<T>(bound);
    }
    // Intrinsics heads start at the decode of zeros (fx = softplus(0) W,
    // centred principal point) and move only through their own gradient.
    if (name.starts_with("camera.focal") || name.starts_with("camera.principal")) {
      for (auto& x : v) x = T(0);
    }
  }
}

template <typename T>
CameraPrediction<T> Model<T>::predict_camera(const Tensor<T>& prev, const Tensor<T>& target,
                                             const Tensor<T>& next) const {
  const std::size_t H = target.dim(1), W = target.dim(2);
  const auto fwd = camera.forward(target, next);
  const auto bwd = camera.forward(prev, target);
  CameraPrediction<T> out;
  out.pose_fwd = se3_from_axis_angle(fwd.axis_angle, fwd.translation, false);
  out.pose_bwd = se3_from_axis_angle(bwd.axis_angle, bwd.translation, true);
  out.intrinsics = (decode_intrinsics(fwd.focal, fwd.principal, H, W) +
                    decode_intrinsics(bwd.focal, bwd.principal, H, W)) *
                   T(0.5);
  return out;
}

#define MDEPTH_INSTANTIATE_MODELS(T)                                                                 \
  template struct Conv<T>;                                                                           \
  template struct Linear<T>;                                                                         \
  template class DepthNet<T>;                                                                        \
  template class CameraNet<T>;                                                                       \
  template struct Model<T>;                                                                          \
  template Tensor<T> decode_intrinsics(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template CameraIntrinsics intrinsics_value(const Tensor<T>&, std::size_t, std::size_t);

MDEPTH_INSTANTIATE_MODELS(float)
MDEPTH_INSTANTIATE_MODELS(double)

}  // namespace mdepth

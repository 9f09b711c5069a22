#pragma once

#include <type_traits>
#include <vector>

#include "mdepth/tensor.hpp"

// Differentiable operations over Tensor<T>. Every op records a backward
// closure when any input requires grad. Reductions accumulate sequentially in
// ascending flat-index order in double precision, so results are
// bit-reproducible for a given build.
namespace mdepth {

// Elementwise binary ops with numpy-style broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

// Same-shape selection ops; the gradient goes to the selected operand
// (ties go to `a`).
template <typename T> Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, std::type_identity_t<T> c);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, std::type_identity_t<T> c);
template <typename T> Tensor<T> rsub_scalar(std::type_identity_t<T> c, const Tensor<T>& x);  // c - x

template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> sqrt(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);
template <typename T> Tensor<T> reciprocal(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> elu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> softplus(const Tensor<T>& x);
/// Clamps into [lo, hi]; zero gradient outside.
template <typename T> Tensor<T> clamp(const Tensor<T>& x, std::type_identity_t<T> lo, std::type_identity_t<T> hi);
template <typename T> Tensor<T> clamp_min(const Tensor<T>& x, std::type_identity_t<T> lo);

/// sin(sqrt(x)) / sqrt(x), series-expanded near 0. Used by Rodrigues.
template <typename T> Tensor<T> sinc_sqrt(const Tensor<T>& x);
/// (1 - cos(sqrt(x))) / x, series-expanded near 0.
template <typename T> Tensor<T> cosc_sqrt(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Reduces one axis away.
template <typename T> Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis);
/// Lower median over all elements: the element of rank (n-1)/2. The gradient
/// flows to that single selected element. Ties are broken by flat index.
template <typename T> Tensor<T> median(const Tensor<T>& x);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> transpose(const Tensor<T>& x);  // rank-2 only
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

/// (m,k) x (k,n) -> (m,n).
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x: (C,H,W); weight: (O,C,k,k); bias: (O) or undefined. Zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding);
/// Edge-replicate padding of the two trailing axes of (C,H,W).
template <typename T> Tensor<T> pad_replicate(const Tensor<T>& x, std::size_t pad);
/// Unpadded mean pooling over (C,H,W).
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride);

/// Bilinear sampling of image (C,H,W) at grid (H',W',2) holding normalized
/// (x, y) coordinates: -1 is pixel 0, +1 is pixel extent-1. Coordinates
/// outside the image are clamped to the border. Pixel coordinates within a
/// few ulps of an integer sample that pixel exactly.
template <typename T> Tensor<T> grid_sample(const Tensor<T>& image, const Tensor<T>& grid);
/// Corner-aligned bilinear resize of (C,H,W) or (H,W).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& x) { return neg(x); }
template <typename T> Tensor<T> operator+(const Tensor<T>& x, std::type_identity_t<T> c) { return add_scalar(x, c); }
template <typename T> Tensor<T> operator+(std::type_identity_t<T> c, const Tensor<T>& x) { return add_scalar(x, c); }
template <typename T> Tensor<T> operator-(const Tensor<T>& x, std::type_identity_t<T> c) { return add_scalar(x, -c); }
template <typename T> Tensor<T> operator-(std::type_identity_t<T> c, const Tensor<T>& x) { return rsub_scalar(c, x); }
template <typename T> Tensor<T> operator*(const Tensor<T>& x, std::type_identity_t<T> c) { return mul_scalar(x, c); }
template <typename T> Tensor<T> operator*(std::type_identity_t<T> c, const Tensor<T>& x) { return mul_scalar(x, c); }
template <typename T> Tensor<T> operator/(const Tensor<T>& x, std::type_identity_t<T> c) { return mul_scalar(x, T(1) / c); }

}  // namespace mdepth

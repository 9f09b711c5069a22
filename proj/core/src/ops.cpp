#include "mdepth/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mdepth {

namespace {

template <typename T>
using Node = detail::Node<T>;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D dfdx) {
  const auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [dfdx](Node<T>& o) {
    auto* g = grad_target(o, 0);
    if (!g) return;
    const auto& in = o.inputs[0]->value;
    for (std::size_t i = 0; i < in.size(); ++i) (*g)[i] += o.grad[i] * dfdx(in[i], o.value[i]);
  });
}

// Output shape and per-dimension operand strides (0 on broadcast axes).
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> sa;
  std::vector<std::size_t> sb;
  std::size_t numel = 0;

  // Calls f(i, ia, ib) for every output element in row-major order.
  template <typename F>
  void visit(F&& f) const {
    const std::size_t rank = out.size();
    if (rank == 0) {
      f(std::size_t{0}, std::size_t{0}, std::size_t{0});
      return;
    }
    std::vector<std::size_t> idx(rank, 0);
    const std::size_t inner = out[rank - 1], ia_step = sa[rank - 1], ib_step = sb[rank - 1];
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < numel; i += inner) {
      for (std::size_t k = 0; k < inner; ++k) f(i + k, ia + k * ia_step, ib + k * ib_step);
      for (std::size_t d = rank - 1; d-- > 0;) {
        ++idx[d];
        ia += sa[d];
        ib += sb[d];
        if (idx[d] < out[d]) break;
        ia -= sa[d] * out[d];
        ib -= sb[d] * out[d];
        idx[d] = 0;
      }
    }
  }
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1), out(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  for (std::size_t d = 0; d < rank; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
      throw TensorError("cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
    }
    out[d] = std::max(pa[d], pb[d]);
  }
  std::vector<std::size_t> sa(rank, 0), sb(rank, 0);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t d = rank; d-- > 0;) {
    sa[d] = pa[d] == 1 ? 0 : acc_a;
    sb[d] = pb[d] == 1 ? 0 : acc_b;
    acc_a *= pa[d];
    acc_b *= pb[d];
  }
  const std::size_t n = shape_numel(out);
  return BroadcastPlan{out, std::move(sa), std::move(sb), n};
}

// f(a, b) forward; da(a, b, out) and db(a, b, out) are the partials.
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  const auto av = a.values();
  const auto bv = b.values();
  if (a.shape() == b.shape()) {
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    return make_result<T>(a.shape(), std::move(out), {a, b}, [da, db](Node<T>& o) {
      const auto& x = o.inputs[0]->value;
      const auto& y = o.inputs[1]->value;
      if (auto* g = grad_target(o, 0)) {
        for (std::size_t i = 0; i < x.size(); ++i) (*g)[i] += o.grad[i] * da(x[i], y[i], o.value[i]);
      }
      if (auto* g = grad_target(o, 1)) {
        for (std::size_t i = 0; i < x.size(); ++i) (*g)[i] += o.grad[i] * db(x[i], y[i], o.value[i]);
      }
    });
  }
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  std::vector<T> out(plan->numel);
  plan->visit([&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(av[ia], bv[ib]); });
  return make_result<T>(plan->out, std::move(out), {a, b}, [plan, da, db](Node<T>& o) {
    const auto& x = o.inputs[0]->value;
    const auto& y = o.inputs[1]->value;
    if (auto* g = grad_target(o, 0)) {
      plan->visit([&](std::size_t i, std::size_t ia, std::size_t ib) {
        (*g)[ia] += o.grad[i] * da(x[ia], y[ib], o.value[i]);
      });
    }
    if (auto* g = grad_target(o, 1)) {
      plan->visit([&](std::size_t i, std::size_t ia, std::size_t ib) {
        (*g)[ib] += o.grad[i] * db(x[ia], y[ib], o.value[i]);
      });
    }
  });
}

void require_chw(const Shape& s, const char* op) {
  if (s.size() != 3) throw TensorError(std::string(op) + ": expected (C,H,W), got " + shape_to_string(s));
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T out) { return -out / y; });
}

template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw TensorError("minimum: shape mismatch");
  return binary(
      a, b, [](T x, T y) { return y < x ? y : x; }, [](T x, T y, T) { return y < x ? T(0) : T(1); },
      [](T x, T y, T) { return y < x ? T(1) : T(0); });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw TensorError("maximum: shape mismatch");
  return binary(
      a, b, [](T x, T y) { return y > x ? y : x; }, [](T x, T y, T) { return y > x ? T(0) : T(1); },
      [](T x, T y, T) { return y > x ? T(1) : T(0); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, std::type_identity_t<T> c) {
  return unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, std::type_identity_t<T> c) {
  return unary(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> rsub_scalar(std::type_identity_t<T> c, const Tensor<T>& x) {
  return unary(x, [c](T v) { return c - v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& x) {
  return unary(x, [](T v) { return T(1) / v; }, [](T, T y) { return -y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> elu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : std::expm1(v); },
      [](T v, T y) { return v > T(0) ? T(1) : y + T(1); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v > T(20) ? v : std::log1p(std::exp(v)); },
      [](T v, T) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, std::type_identity_t<T> lo, std::type_identity_t<T> hi) {
  return unary(
      x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, std::type_identity_t<T> lo) {
  return unary(
      x, [lo](T v) { return v < lo ? lo : v; }, [lo](T v, T) { return v < lo ? T(0) : T(1); });
}

namespace {
constexpr double kSeriesCutoff = 1e-2;

double sinc_sqrt_value(double x) {
  if (x < kSeriesCutoff) return 1.0 - x / 6.0 + x * x / 120.0 - x * x * x / 5040.0;
  const double s = std::sqrt(x);
  return std::sin(s) / s;
}
double sinc_sqrt_deriv(double x) {
  if (x < kSeriesCutoff) return -1.0 / 6.0 + x / 60.0 - x * x / 1680.0 + x * x * x / 72576.0;
  const double s = std::sqrt(x);
  return (s * std::cos(s) - std::sin(s)) / (2.0 * x * s);
}
double cosc_sqrt_value(double x) {
  if (x < kSeriesCutoff) return 0.5 - x / 24.0 + x * x / 720.0 - x * x * x / 40320.0;
  return (1.0 - std::cos(std::sqrt(x))) / x;
}
double cosc_sqrt_deriv(double x) {
  if (x < kSeriesCutoff) return -1.0 / 24.0 + x / 360.0 - x * x / 13440.0 + x * x * x / 907200.0;
  const double s = std::sqrt(x);
  return std::sin(s) / (2.0 * s * x) - (1.0 - std::cos(s)) / (x * x);
}
}  // namespace

template <typename T>
Tensor<T> sinc_sqrt(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return static_cast<T>(sinc_sqrt_value(v)); },
      [](T v, T) { return static_cast<T>(sinc_sqrt_deriv(v)); });
}

template <typename T>
Tensor<T> cosc_sqrt(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return static_cast<T>(cosc_sqrt_value(v)); },
      [](T v, T) { return static_cast<T>(cosc_sqrt_deriv(v)); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.values()) acc += v;
  return make_result<T>({}, {static_cast<T>(acc)}, {x}, [](Node<T>& o) {
    if (auto* g = grad_target(o, 0)) {
      const T go = o.grad[0];
      for (auto& v : *g) v += go;
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const auto n = x.numel();
  if (n == 0) throw TensorError("mean of empty tensor");
  double acc = 0.0;
  for (T v : x.values()) acc += v;
  return make_result<T>({}, {static_cast<T>(acc / static_cast<double>(n))}, {x}, [n](Node<T>& o) {
    if (auto* g = grad_target(o, 0)) {
      const T go = o.grad[0] / static_cast<T>(n);
      for (auto& v : *g) v += go;
    }
  });
}

namespace {
struct AxisSplit {
  std::size_t outer, len, inner;
};
AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw TensorError("axis out of range for " + shape_to_string(s));
  AxisSplit a{1, s[axis], 1};
  for (std::size_t d = 0; d < axis; ++d) a.outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) a.inner *= s[d];
  return a;
}

template <typename T>
Tensor<T> reduce_axis(const Tensor<T>& x, std::size_t axis, bool average) {
  const auto sp = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto xv = x.values();
  const double scale = average ? 1.0 / static_cast<double>(sp.len) : 1.0;
  std::vector<T> out(sp.outer * sp.inner);
  std::vector<double> acc(sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < sp.len; ++k) {
      const T* row = &xv[(o * sp.len + k) * sp.inner];
      for (std::size_t i = 0; i < sp.inner; ++i) acc[i] += row[i];
    }
    for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] = static_cast<T>(acc[i] * scale);
  }
  return make_result<T>(std::move(out_shape), std::move(out), {x}, [sp, scale](Node<T>& o) {
    auto* g = grad_target(o, 0);
    if (!g) return;
    const T s = static_cast<T>(scale);
    for (std::size_t oo = 0; oo < sp.outer; ++oo)
      for (std::size_t k = 0; k < sp.len; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i)
          (*g)[(oo * sp.len + k) * sp.inner + i] += o.grad[oo * sp.inner + i] * s;
  });
}
}  // namespace

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  return reduce_axis(x, axis, false);
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  return reduce_axis(x, axis, true);
}

template <typename T>
Tensor<T> median(const Tensor<T>& x) {
  const auto xv = x.values();
  const std::size_t n = xv.size();
  if (n == 0) throw TensorError("median of empty tensor");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t k = (n - 1) / 2;
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                   [&](std::size_t a, std::size_t b) {
                     return xv[a] < xv[b] || (xv[a] == xv[b] && a < b);
                   });
  const std::size_t sel = idx[k];
  return make_result<T>({}, {xv[sel]}, {x}, [sel](Node<T>& o) {
    if (auto* g = grad_target(o, 0)) (*g)[sel] += o.grad[0];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw TensorError("reshape " + shape_to_string(x.shape()) + " -> " + shape_to_string(shape));
  }
  const auto xv = x.values();
  return make_result<T>(std::move(shape), std::vector<T>(xv.begin(), xv.end()), {x}, [](Node<T>& o) {
    if (auto* g = grad_target(o, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw TensorError("transpose expects rank 2");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto xv = x.values();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  return make_result<T>({n, m}, std::move(out), {x}, [m, n](Node<T>& o) {
    if (auto* g = grad_target(o, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += o.grad[j * m + i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw TensorError("concat of nothing");
  Shape out_shape = xs.front().shape();
  if (axis >= out_shape.size()) throw TensorError("concat: axis out of range");
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& t : xs) {
    auto s = t.shape();
    if (s.size() != out_shape.size()) throw TensorError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != out_shape[d]) throw TensorError("concat: shape mismatch");
    }
    lens.push_back(s[axis]);
    total += s[axis];
  }
  out_shape[axis] = total;
  const auto sp = split_axis(out_shape, axis);
  std::vector<T> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const auto v = xs[t].values();
    const std::size_t block = lens[t] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(&v[o * block], block, &out[o * sp.len * sp.inner + offset * sp.inner]);
    }
    offset += lens[t];
  }
  return make_result<T>(out_shape, std::move(out), xs, [sp, lens](Node<T>& o) {
    std::size_t offset = 0;
    for (std::size_t t = 0; t < lens.size(); ++t) {
      const std::size_t block = lens[t] * sp.inner;
      if (auto* g = grad_target(o, t)) {
        for (std::size_t oo = 0; oo < sp.outer; ++oo) {
          const T* src = &o.grad[oo * sp.len * sp.inner + offset * sp.inner];
          T* dst = &(*g)[oo * block];
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      offset += lens[t];
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto sp = split_axis(x.shape(), axis);
  if (start + length > sp.len) throw TensorError("slice out of range");
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const auto xv = x.values();
  std::vector<T> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(&xv[(o * sp.len + start) * sp.inner], length * sp.inner,
                &out[o * length * sp.inner]);
  }
  return make_result<T>(std::move(out_shape), std::move(out), {x}, [sp, start, length](Node<T>& o) {
    if (auto* g = grad_target(o, 0)) {
      for (std::size_t oo = 0; oo < sp.outer; ++oo) {
        const T* src = &o.grad[oo * length * sp.inner];
        T* dst = &(*g)[(oo * sp.len + start) * sp.inner];
        for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw TensorError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " x " +
                      shape_to_string(b.shape()));
  }
  const Eigen::Index m = static_cast<Eigen::Index>(a.dim(0));
  const Eigen::Index k = static_cast<Eigen::Index>(a.dim(1));
  const Eigen::Index n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<T> out(static_cast<std::size_t>(m * n));
  Eigen::Map<RowMat<T>>(out.data(), m, n).noalias() =
      Eigen::Map<const RowMat<T>>(a.values().data(), m, k) *
      Eigen::Map<const RowMat<T>>(b.values().data(), k, n);
  return make_result<T>({a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, n](Node<T>& o) {
    Eigen::Map<const RowMat<T>> go(o.grad.data(), m, n);
    if (auto* g = grad_target(o, 0)) {
      Eigen::Map<RowMat<T>>(g->data(), m, k).noalias() +=
          go * Eigen::Map<const RowMat<T>>(o.inputs[1]->value.data(), k, n).transpose();
    }
    if (auto* g = grad_target(o, 1)) {
      Eigen::Map<RowMat<T>>(g->data(), k, n).noalias() +=
          Eigen::Map<const RowMat<T>>(o.inputs[0]->value.data(), m, k).transpose() * go;
    }
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  require_chw(x.shape(), "conv2d");
  if (weight.rank() != 4 || weight.dim(1) != x.dim(0) || weight.dim(2) != weight.dim(3)) {
    throw TensorError("conv2d: weight " + shape_to_string(weight.shape()) + " incompatible with input " +
                      shape_to_string(x.shape()));
  }
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = weight.dim(0), k = weight.dim(2);
  if (H + 2 * padding < k || W + 2 * padding < k || stride == 0) throw TensorError("conv2d: bad geometry");
  const std::size_t Ho = (H + 2 * padding - k) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - k) / stride + 1;
  const std::size_t K = C * k * k, N = Ho * Wo;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != O)) throw TensorError("conv2d: bias shape");

  auto col = std::make_shared<std::vector<T>>(K * N, T(0));
  const auto xv = x.values();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = &(*col)[((c * k + ky) * k + kx) * N];
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          const T* src = &xv[(c * H + static_cast<std::size_t>(iy)) * W];
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(W)) row[oy * Wo + ox] = src[ix];
          }
        }
      }

  const auto Oi = static_cast<Eigen::Index>(O), Ki = static_cast<Eigen::Index>(K),
             Ni = static_cast<Eigen::Index>(N);
  std::vector<T> out(O * N);
  Eigen::Map<RowMat<T>> out_m(out.data(), Oi, Ni);
  out_m.noalias() = Eigen::Map<const RowMat<T>>(weight.values().data(), Oi, Ki) *
                    Eigen::Map<const RowMat<T>>(col->data(), Ki, Ni);
  if (has_bias) {
    const auto bv = bias.values();
    for (std::size_t o = 0; o < O; ++o) out_m.row(static_cast<Eigen::Index>(o)).array() += bv[o];
  }

  std::vector<Tensor<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(
      {O, Ho, Wo}, std::move(out), std::move(inputs),
      [col, C, H, W, k, stride, padding, Ho, Wo, Oi, Ki, Ni, has_bias](Node<T>& o) {
        Eigen::Map<const RowMat<T>> go(o.grad.data(), Oi, Ni);
        if (auto* g = grad_target(o, 1)) {
          Eigen::Map<RowMat<T>>(g->data(), Oi, Ki).noalias() +=
              go * Eigen::Map<const RowMat<T>>(col->data(), Ki, Ni).transpose();
        }
        if (has_bias) {
          if (auto* g = grad_target(o, 2)) {
            for (Eigen::Index r = 0; r < Oi; ++r) {
              double acc = 0.0;
              for (Eigen::Index c = 0; c < Ni; ++c) acc += go(r, c);
              (*g)[static_cast<std::size_t>(r)] += static_cast<T>(acc);
            }
          }
        }
        if (auto* g = grad_target(o, 0)) {
          const auto N = static_cast<std::size_t>(Ni);
          std::vector<T> gcol(static_cast<std::size_t>(Ki) * N);
          Eigen::Map<RowMat<T>>(gcol.data(), Ki, Ni).noalias() =
              Eigen::Map<const RowMat<T>>(o.inputs[1]->value.data(), Oi, Ki).transpose() * go;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = &gcol[((c * k + ky) * k + kx) * N];
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                  const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                  T* dst = &(*g)[(c * H + static_cast<std::size_t>(iy)) * W];
                  for (std::size_t ox = 0; ox < Wo; ++ox) {
                    const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                    if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(W)) dst[ix] += row[oy * Wo + ox];
                  }
                }
              }
        }
      });
}

template <typename T>
Tensor<T> pad_replicate(const Tensor<T>& x, std::size_t pad) {
  require_chw(x.shape(), "pad_replicate");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t Hp = H + 2 * pad, Wp = W + 2 * pad;
  auto src_index = [=](std::size_t c, std::size_t y, std::size_t xx) {
    const std::size_t sy = std::min(H - 1, y < pad ? 0 : y - pad);
    const std::size_t sx = std::min(W - 1, xx < pad ? 0 : xx - pad);
    return (c * H + sy) * W + sx;
  };
  const auto xv = x.values();
  std::vector<T> out(C * Hp * Wp);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < Hp; ++y)
      for (std::size_t xx = 0; xx < Wp; ++xx) out[(c * Hp + y) * Wp + xx] = xv[src_index(c, y, xx)];
  return make_result<T>({C, Hp, Wp}, std::move(out), {x}, [=](Node<T>& o) {
    auto* g = grad_target(o, 0);
    if (!g) return;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < Hp; ++y)
        for (std::size_t xx = 0; xx < Wp; ++xx) (*g)[src_index(c, y, xx)] += o.grad[(c * Hp + y) * Wp + xx];
  });
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  require_chw(x.shape(), "avg_pool2d");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (kernel == 0 || stride == 0 || H < kernel || W < kernel) throw TensorError("avg_pool2d: bad geometry");
  const std::size_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  const auto xv = x.values();
  std::vector<T> out(C * Ho * Wo);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        T acc = 0;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const T* row = &xv[(c * H + oy * stride + ky) * W + ox * stride];
          for (std::size_t kx = 0; kx < kernel; ++kx) acc += row[kx];
        }
        out[(c * Ho + oy) * Wo + ox] = acc * inv;
      }
  return make_result<T>({C, Ho, Wo}, std::move(out), {x}, [=](Node<T>& o) {
    auto* g = grad_target(o, 0);
    if (!g) return;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          const T go = o.grad[(c * Ho + oy) * Wo + ox] * inv;
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            T* row = &(*g)[(c * H + oy * stride + ky) * W + ox * stride];
            for (std::size_t kx = 0; kx < kernel; ++kx) row[kx] += go;
          }
        }
  });
}

namespace {

// Bilinear sample location along one axis with border clamping.
template <typename T>
struct AxisSample {
  std::size_t i0, i1;
  T frac;
  bool inside;  // false when clamped; the coordinate then carries no gradient
};

template <typename T>
AxisSample<T> axis_sample(T coord, std::size_t extent) {
  const T hi = static_cast<T>(extent - 1);
  AxisSample<T> s{};
  s.inside = coord >= T(0) && coord <= hi;
  T c = std::min(std::max(coord, T(0)), hi);
  const T snap_tol = T(32) * std::numeric_limits<T>::epsilon() * static_cast<T>(extent);
  const T r = std::nearbyint(c);
  if (std::abs(c - r) <= snap_tol) c = r;
  const T fl = std::floor(c);
  s.i0 = static_cast<std::size_t>(fl);
  s.i1 = std::min(s.i0 + 1, extent - 1);
  s.frac = c - fl;
  return s;
}

}  // namespace

template <typename T>
Tensor<T> grid_sample(const Tensor<T>& image, const Tensor<T>& grid) {
  require_chw(image.shape(), "grid_sample");
  if (grid.rank() != 3 || grid.dim(2) != 2) {
    throw TensorError("grid_sample: grid must be (H',W',2), got " + shape_to_string(grid.shape()));
  }
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const std::size_t Ho = grid.dim(0), Wo = grid.dim(1), N = Ho * Wo;
  const T sx = static_cast<T>(W - 1) / T(2), sy = static_cast<T>(H - 1) / T(2);
  const auto iv = image.values();
  const auto gv = grid.values();
  std::vector<T> out(C * N);
  for (std::size_t p = 0; p < N; ++p) {
    const auto ax = axis_sample<T>((gv[2 * p] + T(1)) * sx, W);
    const auto ay = axis_sample<T>((gv[2 * p + 1] + T(1)) * sy, H);
    const T w00 = (T(1) - ay.frac) * (T(1) - ax.frac), w01 = (T(1) - ay.frac) * ax.frac;
    const T w10 = ay.frac * (T(1) - ax.frac), w11 = ay.frac * ax.frac;
    for (std::size_t c = 0; c < C; ++c) {
      const T* plane = &iv[c * H * W];
      out[c * N + p] = w00 * plane[ay.i0 * W + ax.i0] + w01 * plane[ay.i0 * W + ax.i1] +
                       w10 * plane[ay.i1 * W + ax.i0] + w11 * plane[ay.i1 * W + ax.i1];
    }
  }
  return make_result<T>({C, Ho, Wo}, std::move(out), {image, grid}, [=](Node<T>& o) {
    const auto& img = o.inputs[0]->value;
    const auto& gr = o.inputs[1]->value;
    auto* gi = grad_target(o, 0);
    auto* gg = grad_target(o, 1);
    for (std::size_t p = 0; p < N; ++p) {
      const auto ax = axis_sample<T>((gr[2 * p] + T(1)) * sx, W);
      const auto ay = axis_sample<T>((gr[2 * p + 1] + T(1)) * sy, H);
      const T fx = ax.frac, fy = ay.frac;
      T dx = 0, dy = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const T go = o.grad[c * N + p];
        const std::size_t base = c * H * W;
        const T v00 = img[base + ay.i0 * W + ax.i0], v01 = img[base + ay.i0 * W + ax.i1];
        const T v10 = img[base + ay.i1 * W + ax.i0], v11 = img[base + ay.i1 * W + ax.i1];
        if (gi) {
          (*gi)[base + ay.i0 * W + ax.i0] += go * (T(1) - fy) * (T(1) - fx);
          (*gi)[base + ay.i0 * W + ax.i1] += go * (T(1) - fy) * fx;
          (*gi)[base + ay.i1 * W + ax.i0] += go * fy * (T(1) - fx);
          (*gi)[base + ay.i1 * W + ax.i1] += go * fy * fx;
        }
        dx += go * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
        dy += go * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
      }
      if (gg) {
        if (ax.inside && ax.i1 != ax.i0) (*gg)[2 * p] += dx * sx;
        if (ay.inside && ay.i1 != ay.i0) (*gg)[2 * p + 1] += dy * sy;
      }
    }
  });
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw TensorError("resize_bilinear: output extents must be >= 1");
  const bool planar = x.rank() == 2;
  if (!planar && x.rank() != 3) throw TensorError("resize_bilinear: expected (H,W) or (C,H,W)");
  const std::size_t C = planar ? 1 : x.dim(0);
  const std::size_t H = x.dim(planar ? 0 : 1), W = x.dim(planar ? 1 : 2);
  auto coord = [](std::size_t o, std::size_t in, std::size_t out) {
    if (out == 1) return T(0);
    return static_cast<T>(o * (in - 1)) / static_cast<T>(out - 1);
  };
  std::vector<AxisSample<T>> ys(out_h), xs(out_w);
  for (std::size_t i = 0; i < out_h; ++i) ys[i] = axis_sample<T>(coord(i, H, out_h), H);
  for (std::size_t i = 0; i < out_w; ++i) xs[i] = axis_sample<T>(coord(i, W, out_w), W);
  const auto xv = x.values();
  std::vector<T> out(C * out_h * out_w);
  for (std::size_t c = 0; c < C; ++c) {
    const T* plane = &xv[c * H * W];
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& ay = ys[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& ax = xs[ox];
        out[(c * out_h + oy) * out_w + ox] =
            (T(1) - ay.frac) * ((T(1) - ax.frac) * plane[ay.i0 * W + ax.i0] + ax.frac * plane[ay.i0 * W + ax.i1]) +
            ay.frac * ((T(1) - ax.frac) * plane[ay.i1 * W + ax.i0] + ax.frac * plane[ay.i1 * W + ax.i1]);
      }
    }
  }
  Shape shape = planar ? Shape{out_h, out_w} : Shape{C, out_h, out_w};
  return make_result<T>(std::move(shape), std::move(out), {x}, [=](Node<T>& o) {
    auto* g = grad_target(o, 0);
    if (!g) return;
    for (std::size_t c = 0; c < C; ++c) {
      T* plane = &(*g)[c * H * W];
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const auto& ay = ys[oy];
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto& ax = xs[ox];
          const T go = o.grad[(c * out_h + oy) * out_w + ox];
          plane[ay.i0 * W + ax.i0] += go * (T(1) - ay.frac) * (T(1) - ax.frac);
          plane[ay.i0 * W + ax.i1] += go * (T(1) - ay.frac) * ax.frac;
          plane[ay.i1 * W + ax.i0] += go * ay.frac * (T(1) - ax.frac);
          plane[ay.i1 * W + ax.i1] += go * ay.frac * ax.frac;
        }
      }
    }
  });
}

#define MDEPTH_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> minimum(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> maximum(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                          \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                          \
  template Tensor<T> rsub_scalar(T, const Tensor<T>&);                                         \
  template Tensor<T> neg(const Tensor<T>&);                                                    \
  template Tensor<T> exp(const Tensor<T>&);                                                    \
  template Tensor<T> log(const Tensor<T>&);                                                    \
  template Tensor<T> sqrt(const Tensor<T>&);                                                   \
  template Tensor<T> abs(const Tensor<T>&);                                                    \
  template Tensor<T> square(const Tensor<T>&);                                                 \
  template Tensor<T> reciprocal(const Tensor<T>&);                                             \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> elu(const Tensor<T>&);                                                    \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> softplus(const Tensor<T>&);                                               \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                            \
  template Tensor<T> clamp_min(const Tensor<T>&, T);                                           \
  template Tensor<T> sinc_sqrt(const Tensor<T>&);                                              \
  template Tensor<T> cosc_sqrt(const Tensor<T>&);                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> sum_axis(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> mean_axis(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> median(const Tensor<T>&);                                                 \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> transpose(const Tensor<T>&);                                              \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                       \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                            std::size_t);                                                      \
  template Tensor<T> pad_replicate(const Tensor<T>&, std::size_t);                             \
  template Tensor<T> avg_pool2d(const Tensor<T>&, std::size_t, std::size_t);                   \
  template Tensor<T> grid_sample(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> resize_bilinear(const Tensor<T>&, std::size_t, std::size_t);

MDEPTH_INSTANTIATE_OPS(float)
MDEPTH_INSTANTIATE_OPS(double)

}  // namespace mdepth

#include "mdepth/losses.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "mdepth/ops.hpp"

namespace mdepth {

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0,1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0,1]");
  if (n_scales < 1) throw std::invalid_argument("n_scales must be >= 1");
  if (!(disparity_floor > 0.0)) throw std::invalid_argument("disparity_floor must be positive");
}

namespace {

// 3x3 box mean with replicate padding, one channel of extent h x w.
template <typename T>
void box3(const T* src, T* dst, std::size_t h, std::size_t w, std::vector<T>& tmp) {
  tmp.resize(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    const T* s = src + r * w;
    T* t = tmp.data() + r * w;
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t cl = c > 0 ? c - 1 : 0, cr = c + 1 < w ? c + 1 : w - 1;
      t[c] = s[cl] + s[c] + s[cr];
    }
  }
  const T inv = T(1) / T(9);
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t ru = r > 0 ? r - 1 : 0, rd = r + 1 < h ? r + 1 : h - 1;
    for (std::size_t c = 0; c < w; ++c) dst[r * w + c] = (tmp[ru * w + c] + tmp[r * w + c] + tmp[rd * w + c]) * inv;
  }
}

// Adjoint of box3.
template <typename T>
void box3_adjoint(const T* g, T* dst, std::size_t h, std::size_t w, std::vector<T>& tmp) {
  tmp.assign(h * w, T(0));
  const T inv = T(1) / T(9);
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t ru = r > 0 ? r - 1 : 0, rd = r + 1 < h ? r + 1 : h - 1;
    for (std::size_t c = 0; c < w; ++c) {
      const T v = g[r * w + c] * inv;
      tmp[ru * w + c] += v;
      tmp[r * w + c] += v;
      tmp[rd * w + c] += v;
    }
  }
  for (std::size_t r = 0; r < h; ++r) {
    const T* t = tmp.data() + r * w;
    T* d = dst + r * w;
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t cl = c > 0 ? c - 1 : 0, cr = c + 1 < w ? c + 1 : w - 1;
      d[cl] += t[c];
      d[c] += t[c];
      d[cr] += t[c];
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> ssim(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.shape() != y.shape() || x.rank() != 3) {
    throw TensorError("ssim: shapes " + shape_to_string(x.shape()) + " and " + shape_to_string(y.shape()));
  }
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), n = C * H * W, hw = H * W;
  const auto xv = x.values(), yv = y.values();
  // Local statistics: means a, b and raw second moments p = E[x^2], q = E[y^2], r = E[xy].
  std::vector<T> a(n), b(n), p(n), q(n), r(n), sq(hw), tmp;
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t o = c * hw;
    box3(&xv[o], &a[o], H, W, tmp);
    box3(&yv[o], &b[o], H, W, tmp);
    for (std::size_t i = 0; i < hw; ++i) sq[i] = xv[o + i] * xv[o + i];
    box3(sq.data(), &p[o], H, W, tmp);
    for (std::size_t i = 0; i < hw; ++i) sq[i] = yv[o + i] * yv[o + i];
    box3(sq.data(), &q[o], H, W, tmp);
    for (std::size_t i = 0; i < hw; ++i) sq[i] = xv[o + i] * yv[o + i];
    box3(sq.data(), &r[o], H, W, tmp);
  }
  const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T n1 = a[i] * b[i] * T(2) + c1, n2 = (r[i] - a[i] * b[i]) * T(2) + c2;
    const T d1 = a[i] * a[i] + b[i] * b[i] + c1, d2 = (p[i] - a[i] * a[i]) + (q[i] - b[i] * b[i]) + c2;
    out[i] = (n1 * n2) / (d1 * d2);
  }
  if (!x.requires_grad() && !y.requires_grad()) return Tensor<T>::from_data(x.shape(), std::move(out));
  std::vector<T> xs(xv.begin(), xv.end()), ys(yv.begin(), yv.end());
  return make_result<T>(x.shape(), std::move(out), {x, y},
                        [=, a = std::move(a), b = std::move(b), p = std::move(p), q = std::move(q),
                         r = std::move(r)](detail::Node<T>& o) {
    auto* gx = grad_target(o, 0);
    auto* gy = grad_target(o, 1);
    if (!gx && !gy) return;
    // Upstream gradient pushed onto the five pooled maps.
    std::vector<T> ga(n), gb(n), gp(n), gq(n), gr(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T n1 = a[i] * b[i] * T(2) + c1, n2 = (r[i] - a[i] * b[i]) * T(2) + c2;
      const T d1 = a[i] * a[i] + b[i] * b[i] + c1, d2 = (p[i] - a[i] * a[i]) + (q[i] - b[i] * b[i]) + c2;
      const T dd = d1 * d2, s = n1 * n2 / dd, g = o.grad[i];
      const T cross = (n2 - n1) * T(2) / dd, k1 = T(2) * s / d1, k2 = T(2) * s / d2;
      ga[i] = g * (b[i] * cross - a[i] * k1 + a[i] * k2);
      gb[i] = g * (a[i] * cross - b[i] * k1 + b[i] * k2);
      gp[i] = -g * s / d2;
      gq[i] = gp[i];
      gr[i] = g * T(2) * n1 / dd;
    }
    std::vector<T> tmp, ta(hw), tb(hw), tp(hw), tq(hw), tr(hw);
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = c * hw;
      for (auto* v : {&ta, &tb, &tp, &tq, &tr}) std::fill(v->begin(), v->end(), T(0));
      box3_adjoint(&gr[off], tr.data(), H, W, tmp);
      if (gx) {
        box3_adjoint(&ga[off], ta.data(), H, W, tmp);
        box3_adjoint(&gp[off], tp.data(), H, W, tmp);
        for (std::size_t i = 0; i < hw; ++i) (*gx)[off + i] += ta[i] + T(2) * xs[off + i] * tp[i] + ys[off + i] * tr[i];
      }
      if (gy) {
        box3_adjoint(&gb[off], tb.data(), H, W, tmp);
        box3_adjoint(&gq[off], tq.data(), H, W, tmp);
        for (std::size_t i = 0; i < hw; ++i) (*gy)[off + i] += tb[i] + T(2) * ys[off + i] * tq[i] + xs[off + i] * tr[i];
      }
    }
  });
}

template <typename T>
Tensor<T> photometric_error(const Tensor<T>& target, const Tensor<T>& recon, double alpha) {
  if (target.shape() != recon.shape() || target.rank() != 3) {
    throw TensorError("photometric_error: shapes " + shape_to_string(target.shape()) + " and " +
                      shape_to_string(recon.shape()));
  }
  const auto l1 = mean_axis(abs(target - recon), 0);
  if (alpha == 0.0) return l1 * T(1);
  const auto dssim = mean_axis(T(1) - ssim(target, recon), 0);
  return dssim * static_cast<T>(alpha / 2.0) + l1 * static_cast<T>(1.0 - alpha);
}

template <typename T>
Tensor<T> identity_error(const Tensor<T>& target, const Tensor<T>& prev, const Tensor<T>& next, double alpha) {
  NoGradGuard ng;
  return minimum(photometric_error(target, prev, alpha), photometric_error(target, next, alpha));
}

template <typename T>
Tensor<T> ssl_loss_with_identity(const Tensor<T>& target, const Tensor<T>& recon_prev,
                                 const Tensor<T>& recon_next, const Tensor<T>& identity_pe,
                                 const LossConfig& cfg) {
  const auto pe_prev = photometric_error(target, recon_prev, cfg.alpha);
  const auto pe_next = photometric_error(target, recon_next, cfg.alpha);
  const auto reduced =
      cfg.use_min_reprojection ? minimum(pe_prev, pe_next) : (pe_prev + pe_next) * T(0.5);
  if (!cfg.use_automask) return mean(reduced);
  const auto rv = reduced.values();
  const auto iv = identity_pe.values();
  if (rv.size() != iv.size()) throw TensorError("ssl_loss: identity error shape mismatch");
  std::vector<T> mask(rv.size());
  for (std::size_t i = 0; i < rv.size(); ++i) mask[i] = rv[i] < iv[i] ? T(1) : T(0);
  return mean(reduced * Tensor<T>::from_data(reduced.shape(), std::move(mask)));
}

template <typename T>
Tensor<T> ssl_loss(const Tensor<T>& target, const Tensor<T>& prev, const Tensor<T>& next,
                   const Tensor<T>& recon_prev, const Tensor<T>& recon_next, const LossConfig& cfg) {
  if (prev.shape() != target.shape() || next.shape() != target.shape()) {
    throw TensorError("ssl_loss: support frames must match the target shape");
  }
  Tensor<T> identity;
  if (cfg.use_automask) identity = identity_error(target, prev, next, cfg.alpha);
  return ssl_loss_with_identity(target, recon_prev, recon_next, identity, cfg);
}

template <typename T>
Tensor<T> ssi_normalize(const Tensor<T>& d) {
  const auto centered = d - median(d);
  const auto scale = clamp_min(mean(abs(centered)), static_cast<T>(kSsiMinScale));
  return centered / scale;
}

template <typename T>
Tensor<T> psl_loss(const Tensor<T>& pred, const Tensor<T>& pseudo) {
  if (pred.shape() != pseudo.shape()) {
    throw TensorError("psl_loss: shapes " + shape_to_string(pred.shape()) + " and " +
                      shape_to_string(pseudo.shape()));
  }
  return mean(abs(ssi_normalize(pred) - ssi_normalize(pseudo.detach())));
}

template <typename T>
LossTerms<T> total_loss(const std::vector<Tensor<T>>& pyramid, const LossInputs<T>& in, const LossConfig& cfg) {
  cfg.validate();
  if (pyramid.size() != cfg.n_scales) {
    throw std::invalid_argument("total_loss: pyramid has " + std::to_string(pyramid.size()) +
                                " levels, config expects " + std::to_string(cfg.n_scales));
  }
  const std::size_t H = in.target.dim(1), W = in.target.dim(2);
  const bool need_ssl = cfg.lambda > 0.0;
  const bool need_psl = cfg.lambda < 1.0;
  if (need_psl && !in.pseudo.defined()) throw std::invalid_argument("total_loss: lambda < 1 needs pseudo-disparity");

  Tensor<T> identity;
  if (need_ssl && cfg.use_automask) identity = identity_error(in.target, in.prev, in.next, cfg.alpha);

  std::vector<Tensor<T>> disp(pyramid.size());
  for (std::size_t i = 0; i < pyramid.size(); ++i) {
    const auto& level = pyramid[i];
    const bool planar = level.rank() == 2;
    const std::size_t h = level.dim(planar ? 0 : 1), w = level.dim(planar ? 1 : 2);
    auto d = planar ? level : reshape(level, {h, w});
    if (h != H || w != W) d = resize_bilinear(d, H, W);
    disp[i] = d + static_cast<T>(cfg.disparity_floor);
  }

  Tensor<T> finest_psl;
  if (need_psl && !cfg.multiscale_psl) finest_psl = psl_loss(disp[0], in.pseudo);

  const T lam = static_cast<T>(cfg.lambda);
  LossTerms<T> terms;
  Tensor<T> acc;
  for (std::size_t i = 0; i < disp.size(); ++i) {
    Tensor<T> term;
    if (need_ssl) {
      const auto recon_prev = synthesize_view(in.prev, disp[i], in.pose_prev, in.intrinsics);
      const auto recon_next = synthesize_view(in.next, disp[i], in.pose_next, in.intrinsics);
      const auto s = ssl_loss_with_identity(in.target, recon_prev, recon_next, identity, cfg);
      terms.ssl += static_cast<double>(s.item());
      term = s * lam;
    }
    if (need_psl) {
      const auto p = cfg.multiscale_psl ? psl_loss(disp[i], in.pseudo) : finest_psl;
      terms.psl += static_cast<double>(p.item());
      const auto weighted = p * (T(1) - lam);
      term = term.defined() ? term + weighted : weighted;
    }
    acc = acc.defined() ? acc + term : term;
  }
  const double n = static_cast<double>(disp.size());
  terms.total = acc / static_cast<T>(n);
  terms.ssl /= n;
  terms.psl /= n;
  return terms;
}

#define MDEPTH_INSTANTIATE_LOSSES(T)                                                                          \
  template Tensor<T> ssim(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> photometric_error(const Tensor<T>&, const Tensor<T>&, double);                          \
  template Tensor<T> identity_error(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);           \
  template Tensor<T> ssl_loss_with_identity(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                            const Tensor<T>&, const LossConfig&);                            \
  template Tensor<T> ssl_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                              const Tensor<T>&, const LossConfig&);                                          \
  template Tensor<T> ssi_normalize(const Tensor<T>&);                                                         \
  template Tensor<T> psl_loss(const Tensor<T>&, const Tensor<T>&);                                            \
  template LossTerms<T> total_loss(const std::vector<Tensor<T>>&, const LossInputs<T>&, const LossConfig&);

MDEPTH_INSTANTIATE_LOSSES(float)
MDEPTH_INSTANTIATE_LOSSES(double)

}  // namespace mdepth

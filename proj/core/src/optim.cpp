#include "mdepth/optim.hpp"

#include <cmath>

namespace mdepth {

AdamW::AdamW(NamedParameters<float> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (auto& [name, p] : params_) {
    m_.emplace_back(p->numel(), 0.0);
    v_.emplace_back(p->numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor<float>& p = *params_[k].second;
    auto w = p.mutable_values();
    const bool has = p.has_grad();
    const auto g = has ? p.grad() : std::span<const float>{};
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      double x = double(w[i]) * decay;
      if (has) {
        const double gi = g[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        x -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      }
      w[i] = static_cast<float>(x);
    }
    if (has) p.zero_grad();
  }
}

}  // namespace mdepth

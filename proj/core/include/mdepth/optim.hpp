#pragma once

#include <cstddef>
#include <vector>

#include "mdepth/models.hpp"

namespace mdepth {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

/// Adam with decoupled weight decay: p <- p (1 - lr wd), then the usual
/// bias-corrected Adam step. Moments are kept in double.
class AdamW {
 public:
  AdamW(NamedParameters<float> params, AdamWConfig cfg);

  /// Applies one update from the accumulated gradients, then zeroes them.
  /// Parameters without a gradient are only decayed.
  void step(double lr);
  std::size_t steps() const { return t_; }

 private:
  NamedParameters<float> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace mdepth

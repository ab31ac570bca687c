#pragma once

#include <cmath>
#include <numbers>

#include "nn.hpp"

namespace pma2e {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// One AdamW update at 1-based step `step`: decoupled weight decay, then the
/// bias-corrected moment update. Parameters without a gradient see a zero
/// gradient.
template <typename T>
void adamw_step(ParameterSet<T>& params, double lr, const AdamWConfig& cfg, std::size_t step) {
  require(step >= 1, ErrorKind::InvalidArgument, "adamw_step: step is 1-based");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (auto& p : params.items()) {
    auto& w = p.tensor.values();
    const auto g = p.tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      double wi = static_cast<double>(w[i]) * (1.0 - lr * cfg.weight_decay);
      const double m = cfg.beta1 * p.first_moment[i] + (1.0 - cfg.beta1) * gi;
      const double v = cfg.beta2 * p.second_moment[i] + (1.0 - cfg.beta2) * gi * gi;
      p.first_moment[i] = static_cast<T>(m);
      p.second_moment[i] = static_cast<T>(v);
      wi -= lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
      w[i] = static_cast<T>(wi);
    }
  }
}

/// Cosine annealing from lr_max at t=0 to lr_min at t=total; t past the end
/// clamps to lr_min.
inline double cosine_lr(double t, double total, double lr_max, double lr_min) {
  require(total > 0.0, ErrorKind::InvalidArgument, "cosine_lr: total must be positive");
  require(t >= 0.0, ErrorKind::InvalidArgument, "cosine_lr: t must be non-negative");
  if (t >= total) return lr_min;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t / total));
}

}  // namespace pma2e

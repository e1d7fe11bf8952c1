#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace hyperbound {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;

  void validate() const;
};

/// View of one parameter buffer and its gradient for a single step.
struct ParamView {
  std::span<double> value;
  std::span<const double> grad;
  bool decay = true;
};

/// Moment buffers, one pair per parameter, sized on the first step.
struct OptimState {
  AdamWConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t t = 0;

  explicit OptimState(AdamWConfig c = {}) : config(c) { config.validate(); }
};

/// One decoupled-weight-decay Adam step:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// with the decay term applied only where ParamView::decay is set.
/// Throws NumericError on non-finite gradients (state untouched) and
/// DimensionError when buffers disagree with earlier steps.
void adamw_step(std::span<const ParamView> params, OptimState& state);

}  // namespace hyperbound

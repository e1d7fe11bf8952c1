#include "hyperbound/optim.hpp"

#include <cmath>
#include <string>

#include "hyperbound/errors.hpp"
#include "hyperbound/tensor.hpp"

namespace hyperbound {

void AdamWConfig::validate() const {
  if (!(lr > 0.0)) throw UsageError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw UsageError("betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw UsageError("eps must be positive");
  if (!(weight_decay >= 0.0)) throw UsageError("weight decay must be >= 0");
}

void adamw_step(std::span<const ParamView> params, OptimState& state) {
  for (const ParamView& p : params) {
    if (p.value.size() != p.grad.size()) throw DimensionError("parameter and gradient sizes differ");
    if (!all_finite(p.grad)) throw NumericError("non-finite gradient");
  }
  if (state.m.empty()) {
    for (const ParamView& p : params) {
      state.m.emplace_back(p.value.size(), 0.0);
      state.v.emplace_back(p.value.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("optimizer state holds " + std::to_string(state.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].size() != params[k].value.size()) {
      throw DimensionError("parameter " + std::to_string(k) + " changed size between steps");
    }
  }

  const AdamWConfig& c = state.config;
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const ParamView& p = params[k];
    std::vector<double>& m = state.m[k];
    std::vector<double>& v = state.v[k];
    const double wd = p.decay ? c.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p.value[i] -= c.lr * (m_hat / (std::sqrt(v_hat) + c.eps) + wd * p.value[i]);
    }
  }
}

}  // namespace hyperbound

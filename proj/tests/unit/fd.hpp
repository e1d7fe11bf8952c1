#pragma once

// Central-difference helpers shared by the gradient tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "hyperbound/tensor.hpp"

namespace fd {

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// d f / d t[i] for every entry of t, by (f(t + h e_i) - f(t - h e_i)) / 2h.
inline std::vector<double> gradient(hyperbound::Tensor& t, const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> g(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double saved = t[i];
    t[i] = saved + h;
    const double fp = f();
    t[i] = saved - h;
    const double fm = f();
    t[i] = saved;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double max_rel_error(const std::vector<double>& a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_error(a[i], b[i]));
  return worst;
}

}  // namespace fd

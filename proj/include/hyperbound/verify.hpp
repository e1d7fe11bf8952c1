#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "hyperbound/harness.hpp"

namespace hyperbound {

/// Outcome of one randomized check suite.
struct SuiteResult {
  std::string name;
  std::size_t trials = 0;
  std::size_t passed = 0;
  std::size_t skipped = 0;  // coordinates dropped as kink crossings
  double max_error = 0.0;   // worst relative error (gradient suites)
  double seconds = 0.0;
  std::string detail;       // first failure, if any

  bool ok() const { return trials > 0 && passed == trials; }
  std::string summary() const;
};

/// Gradient checks use central differences with step `step` and the relative
/// error |a - b| / max(|a|, |b|, 1e-6).
struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t coords_per_point = 30;
};

/// modified_huber_grad against central differences at `points` random
/// (s, y) drawn away from the kinks at q = +-1.
SuiteResult check_huber_gradients(std::size_t points = 1000, std::uint64_t seed = 0, double tolerance = 1e-6);

/// Tape gradient of the full objective (base loss + bound penalty) against
/// central differences, one random model and batch per point. A coordinate is
/// skipped when the piecewise pattern (ReLU signs, pooling argmax, Huber
/// branch) differs between the two probe points.
SuiteResult check_network_gradients(Architecture arch, std::size_t points = 100, std::uint64_t seed = 0,
                                    const GradCheckOptions& options = {});

/// Random separable samples (dim 2-3, 10 <= l <= 50): perceptron corrections
/// never exceed floor(D^2 / rho*^2), rho* from the exact through-origin
/// max-margin oracle.
SuiteResult novikoff_suite(std::size_t instances = 100, std::uint64_t seed = 0);

struct LooSuiteResult {
  SuiteResult bound;       // loo_errors <= |support set|
  SuiteResult uniqueness;  // oracle hyperplane invariant under permutation
};
/// Tiny samples (l <= 12, dim 2) with an offset so the bias matters.
LooSuiteResult loo_suite(std::size_t instances = 100, std::uint64_t seed = 0);

}  // namespace hyperbound

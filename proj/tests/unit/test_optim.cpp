#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "hyperbound/errors.hpp"
#include "hyperbound/optim.hpp"
#include "hyperbound/rng.hpp"

using namespace hyperbound;

namespace {

// Independent scalar AdamW used as the reference trajectory.
struct ScalarAdamW {
  double lr, b1, b2, eps, wd;
  double m = 0, v = 0;
  int t = 0;
  double step(double p, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    return p - lr * (mh / (std::sqrt(vh) + eps) + wd * p);
  }
};

}  // namespace

TEST_CASE("zero gradient only applies decoupled weight decay") {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0};
  OptimState state(AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.1});
  const ParamView view{p, g, true};
  adamw_step(std::span(&view, 1), state);
  CHECK(p[0] == doctest::Approx(0.99).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(-1.98).epsilon(1e-15));
}

TEST_CASE("first step moves each coordinate by about lr against the gradient sign") {
  std::vector<double> p{0.0, 0.0, 0.0}, g{3.0, -0.01, 250.0};
  OptimState state(AdamWConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});
  const ParamView view{p, g, true};
  adamw_step(std::span(&view, 1), state);
  CHECK(p[0] == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK(p[2] == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(state.t == 1);
}

TEST_CASE("trajectory matches a scalar reference") {
  const AdamWConfig config{2e-3, 0.8, 0.99, 1e-8, 0.1};
  std::vector<double> p{0.5, -1.5, 2.0}, g(3);
  std::vector<double> bias{0.3}, bg(1);
  OptimState state(config);
  std::vector<ScalarAdamW> ref(4, ScalarAdamW{config.lr, config.beta1, config.beta2, config.eps, config.weight_decay});
  ref[3].wd = 0.0;
  std::vector<double> expect{0.5, -1.5, 2.0, 0.3};
  RngStream rng(1);
  for (int step = 0; step < 5; ++step) {
    for (double& v : g) v = rng.normal();
    bg[0] = rng.normal();
    const ParamView views[] = {{p, g, true}, {bias, bg, false}};
    adamw_step(views, state);
    for (int i = 0; i < 3; ++i) expect[i] = ref[i].step(expect[i], g[i]);
    expect[3] = ref[3].step(expect[3], bg[0]);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(p[i] - expect[i]) < 1e-12);
    CHECK(std::abs(bias[0] - expect[3]) < 1e-12);
  }
}

TEST_CASE("step size is bounded by about lr plus the decay term") {
  const AdamWConfig config{1e-2, 0.9, 0.999, 1e-8, 0.1};
  OptimState state(config);
  std::vector<double> p(20), g(20);
  RngStream rng(2);
  for (double& v : p) v = rng.normal();
  for (int step = 0; step < 50; ++step) {
    for (double& v : g) v = 10.0 * rng.normal();
    const std::vector<double> before = p;
    const ParamView view{p, g, true};
    adamw_step(std::span(&view, 1), state);
    for (std::size_t i = 0; i < p.size(); ++i) {
      // |m_hat| / sqrt(v_hat) can exceed 1 early on; 3*lr is a loose envelope
      REQUIRE(std::abs(p[i] - before[i]) <= 3 * config.lr + config.lr * config.weight_decay * std::abs(before[i]));
    }
  }
}

TEST_CASE("biases are never decayed") {
  std::vector<double> b{5.0}, g{0.0};
  OptimState state;
  const ParamView view{b, g, false};
  for (int i = 0; i < 10; ++i) adamw_step(std::span(&view, 1), state);
  CHECK(b[0] == 5.0);
}

TEST_CASE("non-finite gradient leaves parameters and state untouched") {
  std::vector<double> p{1.0, 2.0}, g{0.1, std::numeric_limits<double>::infinity()};
  OptimState state;
  const ParamView view{p, g, true};
  CHECK_THROWS_AS(adamw_step(std::span(&view, 1), state), NumericError);
  CHECK(p == std::vector<double>{1.0, 2.0});
  CHECK(state.t == 0);
  CHECK(state.m.empty());
}

TEST_CASE("shape mismatches and bad configs are rejected") {
  std::vector<double> p{1.0, 2.0}, g{0.1};
  OptimState state;
  const ParamView bad{p, g, true};
  CHECK_THROWS_AS(adamw_step(std::span(&bad, 1), state), DimensionError);

  std::vector<double> g2{0.1, 0.2}, q{1.0}, gq{0.0};
  const ParamView good{p, g2, true};
  adamw_step(std::span(&good, 1), state);
  const ParamView two[] = {{p, g2, true}, {q, gq, true}};
  CHECK_THROWS_AS(adamw_step(two, state), DimensionError);

  CHECK_THROWS_AS(OptimState(AdamWConfig{0.0}), UsageError);
  CHECK_THROWS_AS(OptimState(AdamWConfig{1e-3, 1.0}), UsageError);
  CHECK_THROWS_AS(OptimState(AdamWConfig{1e-3, 0.9, 0.999, 1e-8, -1.0}), UsageError);
}

TEST_CASE("constant gradient streams keep the normalized step within one") {
  RngStream rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const double g0 = rng.uniform(-100.0, 100.0);
    std::vector<double> p{0.0}, g{g0};
    OptimState state(AdamWConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});
    const ParamView view{p, g, true};
    for (int step = 0; step < 100; ++step) {
      const double before = p[0];
      adamw_step(std::span(&view, 1), state);
      REQUIRE(std::abs(p[0] - before) / state.config.lr <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("identical gradient sequences give identical trajectories") {
  auto run = [] {
    std::vector<double> p{0.1, 0.2, 0.3}, g(3);
    OptimState state;
    RngStream rng(4);
    for (int step = 0; step < 20; ++step) {
      for (double& v : g) v = rng.normal();
      const ParamView view{p, g, true};
      adamw_step(std::span(&view, 1), state);
    }
    return p;
  };
  CHECK(run() == run());
}

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "formula_table.hpp"
#include "hyperbound/bounds.hpp"
#include "hyperbound/errors.hpp"
#include "hyperbound/model.hpp"

using namespace hyperbound;

namespace {

LabeledVectors make_set(std::vector<std::vector<double>> points, std::vector<int> labels) {
  LabeledVectors v;
  v.points = std::move(points);
  v.labels = std::move(labels);
  return v;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST_CASE("formula table") {
  const auto outcome = formula_table::evaluate(1e-12);
  for (const auto& f : outcome.failures) MESSAGE(f);
  CHECK(outcome.rows == 20);
  CHECK(outcome.passed == outcome.rows);
  CHECK(outcome.max_rel_error < 1e-12);
}

TEST_CASE("algebraic collapses") {
  RngStream rng(1);
  for (int t = 0; t < 200; ++t) {
    const double B = rng.uniform(0.1, 5.0), eps = rng.uniform(1e-3, 3.0);
    REQUIRE(rel(risk_bound(0.0, B, eps), B * eps) < 1e-15);
    const double l = static_cast<double>(10 + rng.below(10000)), h = static_cast<double>(1 + rng.below(50));
    const double eta = rng.uniform(0.01, 0.5);
    REQUIRE(rel(p_error_bound(0.0, l, h, eta), epsilon_l(l, h, eta)) < 1e-15);
  }
}

TEST_CASE("bounds move in the expected direction") {
  CHECK(epsilon_l(2000, 5, 0.05) < epsilon_l(1000, 5, 0.05));
  CHECK(epsilon_l(1000, 6, 0.05) > epsilon_l(1000, 5, 0.05));
  CHECK(epsilon_l(1000, 5, 0.01) > epsilon_l(1000, 5, 0.05));
  CHECK(risk_bound(0.1, 1, 0.2) > risk_bound(0.05, 1, 0.2));
  CHECK(risk_bound(0.1, 1, 0.2) >= 0.1);
  CHECK(p_error_bound(10, 1000, 5, 0.05) > p_error_bound(5, 1000, 5, 0.05));
  CHECK(vc_bound(3.0, 1.0, 84) >= vc_bound(2.0, 1.0, 84));
  CHECK(vc_bound(3.0, 0.5, 84) >= vc_bound(3.0, 1.0, 84));
  RngStream rng(2);
  for (int t = 0; t < 1000; ++t) {
    const auto n = static_cast<std::int64_t>(1 + rng.below(100));
    const std::int64_t h = vc_bound(rng.uniform(0.01, 100.0), rng.uniform(0.01, 10.0), n);
    REQUIRE(h >= 1);
    REQUIRE(h <= n + 1);
  }
}

TEST_CASE("domain errors") {
  CHECK_THROWS_AS(epsilon_l(0.5, 1, 0.05), DomainError);
  CHECK_THROWS_AS(epsilon_l(100, 0, 0.05), DomainError);
  CHECK_THROWS_AS(epsilon_l(100, 1, 1.0), DomainError);
  CHECK_THROWS_AS(risk_bound(-0.1, 1, 0.1), DomainError);
  CHECK_THROWS_AS(risk_bound(0.1, 0, 0.1), DomainError);
  CHECK_THROWS_AS(vc_bound(1.0, 0.0, 5), DomainError);
  CHECK_THROWS_AS(vc_bound(1.0, 1.0, 0), DomainError);
  CHECK_THROWS_AS(p_error_bound(11, 10, 1, 0.05), DomainError);
  CHECK_THROWS_AS(novikoff_steps(0.5, 1.0), DomainError);
  CHECK_THROWS_AS(novikoff_steps(1.0, 0.0), DomainError);
  CHECK_THROWS_AS(er_bounds(-1, 1, 1, 10), DomainError);
  CHECK_THROWS_AS(empirical_risk(std::vector<double>{}), UsageError);
  CHECK(empirical_risk(std::vector<double>{1.0, 2.0, 6.0}) == 3.0);
}

TEST_CASE("report_from_inputs mirrors the scalar formulas") {
  BoundInputs in;
  in.l = 600;
  in.eta = 0.05;
  in.D = 1.2;
  in.rho = 0.3;
  in.R = 1.2;
  in.Delta = 0.3;
  in.n = 84;
  in.m_errors = 12;
  in.K = 4;
  in.remp = 0.01;
  const BoundReport r = report_from_inputs(in);
  CHECK(r.h_bound == vc_bound(1.2, 0.3, 84));
  CHECK(r.epsilon == epsilon_l(600, static_cast<double>(r.h_bound), 0.05));
  CHECK(r.risk == risk_bound(0.01, 1.0, r.epsilon));
  CHECK(r.novikoff_m == novikoff_steps(1.2, 0.3));
  CHECK(r.p_error == p_error_bound(12, 600, static_cast<double>(r.h_bound), 0.05));
  CHECK(r.er_min == std::min(4.0 / 601.0, 16.0 / 601.0));
  CHECK(r.to_json().find("\"risk_bound\"") != std::string::npos);
  CHECK_FALSE(r.to_table().empty());
}

TEST_CASE("margin_radius") {
  RngStream rng(3);
  MarginHead head = MarginHead::build(2, 2, rng);
  head.weight = Tensor({2, 2}, {3.0, 4.0, 0.5, 0.0});
  const Tensor z({3, 2}, {1.0, 0.0, 0.0, -2.0, 0.6, 0.8});
  const MarginRadius mr = margin_radius(head, z);
  CHECK(mr.D_l == 2.0);
  CHECK(mr.rho[0] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(mr.rho[1] == 2.0);
  for (std::size_t c = 0; c < 2; ++c) CHECK(rel(mr.dl2w2[c], (mr.D_l / mr.rho[c]) * (mr.D_l / mr.rho[c])) < 1e-14);
  head.weight = Tensor({2, 2}, {1.0, 0.0, 0.0, 0.0});
  CHECK_THROWS_AS(margin_radius(head, z), DomainError);
  CHECK_THROWS_AS(margin_radius(head, Tensor({3, 3})), DimensionError);
}

TEST_CASE("support vectors") {
  const std::vector<double> s{1.0, -0.995, 0.3, 1.5, -1.02, 2.0};
  const SupportSet sv = support_vectors(s, 0.01);
  CHECK(sv.indices == std::vector<std::size_t>{0, 1, 2});
  CHECK(sv.essential == 2);
  CHECK(support_vectors(s, 0.05).indices == std::vector<std::size_t>{0, 1, 2, 4});
  CHECK_THROWS_AS(support_vectors(s, -1.0), UsageError);

  // The exact optimum's support points sit at |score| = 1.
  const LabeledVectors data = synth_separable(12, 2, 0.1, 1.0, 4);
  const MaxMarginResult opt = exact_max_margin(data);
  std::vector<double> scores;
  for (const auto& p : data.points) scores.push_back(opt.w[0] * p[0] + opt.w[1] * p[1] + opt.b);
  const SupportSet from_scores = support_vectors(scores, 1e-9);
  CHECK(from_scores.indices == opt.support);
  CHECK(from_scores.essential == opt.support.size());
}

TEST_CASE("perceptron") {
  const LabeledVectors pair = make_set({{1.0, 0.0}, {-1.0, 0.0}}, {1, -1});
  const PerceptronResult r = perceptron_corrections(pair, 100);
  CHECK(r.converged);
  CHECK(r.corrections == 1);
  CHECK(r.w == std::vector<double>{1.0, 0.0});
  const PerceptronResult warm = perceptron_corrections(pair, 100, {2.0, 0.0});
  CHECK(warm.corrections == 0);
  CHECK(warm.converged);
  CHECK_THROWS_AS(perceptron_corrections(pair, 100, {1.0}), DimensionError);
  // XOR never converges.
  const LabeledVectors xor_set = make_set({{1, 1}, {-1, -1}, {1, -1}, {-1, 1}}, {1, 1, -1, -1});
  CHECK_FALSE(perceptron_corrections(xor_set, 50).converged);
}

TEST_CASE("exact max margin examples") {
  const MaxMarginResult sym = exact_max_margin(make_set({{1.0, 0.0}, {-1.0, 0.0}}, {1, -1}));
  CHECK(std::abs(sym.w[0] - 1.0) < 1e-12);
  CHECK(std::abs(sym.w[1]) < 1e-12);
  CHECK(std::abs(sym.b) < 1e-12);
  CHECK(std::abs(sym.rho - 1.0) < 1e-12);
  CHECK(sym.support.size() == 2);

  const MaxMarginResult shifted = exact_max_margin(make_set({{2.0, 0.0}, {0.0, 0.0}, {3.0, 1.0}}, {1, -1, 1}));
  CHECK(std::abs(shifted.w[0] - 1.0) < 1e-12);
  CHECK(std::abs(shifted.b + 1.0) < 1e-12);
  CHECK(shifted.support == std::vector<std::size_t>{0, 1});

  CHECK_THROWS_AS(exact_max_margin(make_set({{1, 1}, {-1, -1}, {1, -1}, {-1, 1}}, {1, 1, -1, -1})), DataError);
}

TEST_CASE("exact max margin: scaling homogeneity and support size") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const LabeledVectors data = synth_separable(10, 2, 0.15, 1.0, seed);
    const MaxMarginResult opt = exact_max_margin(data);
    LabeledVectors scaled = data;
    for (auto& p : scaled.points) {
      for (double& x : p) x *= 3.0;
    }
    scaled.radius.reset();
    const MaxMarginResult big = exact_max_margin(scaled);
    CHECK(rel(big.rho, 3.0 * opt.rho) < 1e-9);
    CHECK(std::abs(big.b - opt.b) < 1e-9);
    CHECK(opt.support.size() <= data.dim() + 1);
    CHECK(opt.rho >= data.margin.value() - 1e-9);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double f = opt.w[0] * data.points[i][0] + opt.w[1] * data.points[i][1] + opt.b;
      REQUIRE(data.labels[i] * f >= 1.0 - 1e-9);
    }
  }
}

TEST_CASE("leave-one-out") {
  // two tight clusters far apart: every hold-out is still classified correctly
  const LabeledVectors clusters = make_set({{2.0, 0.0}, {2.1, 0.1}, {2.0, -0.1}, {-2.0, 0.0}, {-2.1, 0.1}, {-2.0, -0.1}},
                                           {1, 1, 1, -1, -1, -1});
  CHECK(loo_errors(clusters) == 0);
  // every point duplicated: holding one copy out leaves its twin as a support
  LabeledVectors twins = make_set({{1.0, 0.5}, {1.0, 0.5}, {-1.0, 0.2}, {-1.0, 0.2}}, {1, 1, -1, -1});
  CHECK(loo_errors(twins) == 0);
  // a lone positive cannot be held out without emptying its class
  const LabeledVectors lone = make_set({{1.0, 0.0}, {-1.0, 0.0}, {-2.0, 0.0}}, {1, -1, -1});
  CHECK(loo_errors(lone) >= 1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const LabeledVectors data = synth_separable(8, 2, 0.1, 1.0, seed + 100);
    CHECK(loo_errors(data) <= exact_max_margin(data).support.size());
  }
}

TEST_CASE("bound_report invariants") {
  RngStream rng(6);
  MarginHead head = MarginHead::build(3, 4, rng);
  Tensor z({20, 4});
  for (double& v : z.values()) v = rng.normal();
  Tensor s({20, 3});
  std::vector<int> labels(20);
  for (std::size_t i = 0; i < 20; ++i) {
    labels[i] = static_cast<int>(rng.below(3));
    for (std::size_t c = 0; c < 3; ++c) {
      double v = head.bias[c];
      for (std::size_t k = 0; k < 4; ++k) v += head.weight[c * 4 + k] * z[i * 4 + k];
      s[i * 3 + c] = v;
    }
  }
  const BoundReport r = bound_report(head, z, s, labels, 0.05, 0.05);
  CHECK(r.l == 20);
  CHECK(r.classes.size() == 3);
  CHECK(r.remp >= 0.0);
  CHECK(r.remp <= 1.0);
  CHECK(r.h_bound <= 5);
  CHECK(r.er_min <= r.er_sv);
  CHECK(r.risk >= r.remp);
  for (const ClassBounds& c : r.classes) {
    CHECK(c.k_hat <= c.support);
    CHECK(c.p_error >= static_cast<double>(c.margin_errors) / 20.0);
    CHECK(rel(c.dl2w2, (r.D_l / c.rho) * (r.D_l / c.rho)) < 1e-12);
    CHECK(r.rho_min <= c.rho);
  }
  CHECK_THROWS_AS(bound_report(head, z, s, std::vector<int>(3), 0.05, 0.05), DimensionError);
}

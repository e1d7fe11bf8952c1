#include <cmath>
#include <vector>

#include "doctest.h"
#include "fd.hpp"
#include "hyperbound/errors.hpp"
#include "hyperbound/loss.hpp"

using namespace hyperbound;

TEST_CASE("modified Huber values") {
  CHECK(modified_huber(2.0, 1) == 0.0);
  CHECK(modified_huber(0.0, 1) == 1.0);
  CHECK(modified_huber(-1.0, 1) == 4.0);
  CHECK(modified_huber(-2.0, 1) == 8.0);
  CHECK(modified_huber(2.0, -1) == 8.0);
  CHECK(modified_huber(0.5, 1) == 0.25);
  CHECK_THROWS_AS(modified_huber(0.0, 0), UsageError);
  CHECK_THROWS_AS(modified_huber(std::nan(""), 1), NumericError);
}

TEST_CASE("modified Huber gradient") {
  CHECK(modified_huber_grad(2.0, 1) == 0.0);
  CHECK(modified_huber_grad(0.0, 1) == -2.0);
  CHECK(modified_huber_grad(-2.0, 1) == -4.0);
  CHECK(modified_huber_grad(0.0, -1) == 2.0);
  CHECK(modified_huber_grad(-2.0, -1) == 0.0);
  // one-sided derivatives agree at both kinks
  for (int y : {1, -1}) {
    for (double q : {-1.0, 1.0}) {
      const double s = q * y, h = 1e-7;
      const double left = (modified_huber(s, y) - modified_huber(s - h, y)) / h;
      const double right = (modified_huber(s + h, y) - modified_huber(s, y)) / h;
      CHECK(std::abs(left - right) < 1e-5);
      CHECK(std::abs(modified_huber_grad(s, y) - left) < 1e-5);
    }
  }
  RngStream rng(1);
  for (int t = 0; t < 1000; ++t) {
    const double s = rng.uniform(-4.0, 4.0);
    const int y = rng.below(2) ? 1 : -1;
    const double h = 1e-6;
    const double numeric = (modified_huber(s + h, y) - modified_huber(s - h, y)) / (2 * h);
    REQUIRE(std::abs(numeric - modified_huber_grad(s, y)) < 1e-5);
  }
}

TEST_CASE("modified Huber is convex and continuous") {
  RngStream rng(2);
  for (int t = 0; t < 10000; ++t) {
    const double a = rng.uniform(-5.0, 5.0), b = rng.uniform(-5.0, 5.0), lam = rng.uniform();
    const double mix = modified_huber(lam * a + (1 - lam) * b, 1);
    REQUIRE(mix <= lam * modified_huber(a, 1) + (1 - lam) * modified_huber(b, 1) + 1e-12);
  }
  for (double kink : {-1.0, 1.0}) {
    CHECK(std::abs(modified_huber(kink - 1e-12, 1) - modified_huber(kink + 1e-12, 1)) < 1e-10);
  }
}

TEST_CASE("multiclass margin loss") {
  // true class at 2 (loss 0), others at -2 (loss 0) and 0 (loss 1)
  CHECK(multiclass_margin_loss(std::vector<double>{2.0, -2.0, 0.0}, 0) == 1.0);
  CHECK(multiclass_margin_loss(std::vector<double>{0.0, 0.0}, 1) == 2.0);
  CHECK_THROWS_AS(multiclass_margin_loss(std::vector<double>{0.0, 0.0}, 2), UsageError);
  RngStream rng(3);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(10);
    for (double& v : s) v = rng.uniform(-3.0, 3.0);
    const std::size_t label = rng.below(10);
    double expect = 0.0;
    for (std::size_t c = 0; c < 10; ++c) {
      const double q = (c == label ? 1.0 : -1.0) * s[c];
      expect += q <= -1 ? -4 * q : (q <= 1 ? (1 - q) * (1 - q) : 0.0);
    }
    REQUIRE(std::abs(multiclass_margin_loss(s, label) - expect) < 1e-12);
  }
}

TEST_CASE("cross entropy") {
  CHECK(cross_entropy(std::vector<double>(10, 0.0), 3) == doctest::Approx(std::log(10.0)).epsilon(1e-15));
  const double stable = cross_entropy(std::vector<double>{1000.0, 0.0}, 0);
  CHECK(std::isfinite(stable));
  CHECK(stable < 1e-300);
  CHECK(cross_entropy(std::vector<double>{1000.0, 0.0}, 1) == doctest::Approx(1000.0));
  RngStream rng(4);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(5);
    for (double& v : s) v = rng.uniform(-10.0, 10.0);
    const std::size_t label = rng.below(5);
    long double denom = 0.0L;
    for (double v : s) denom += std::exp(static_cast<long double>(v));
    const double oracle = static_cast<double>(std::log(denom) - s[label]);
    REQUIRE(std::abs(cross_entropy(s, label) - oracle) < 1e-12);
    std::vector<double> shifted = s;
    const double k = rng.uniform(-100.0, 100.0);
    for (double& v : shifted) v += k;
    REQUIRE(std::abs(cross_entropy(shifted, label) - cross_entropy(s, label)) < 1e-10);
  }
}

TEST_CASE("bound regularizer") {
  RngStream rng(5);
  MarginHead head = MarginHead::build(2, 2, rng);
  head.weight = Tensor({2, 2}, {1.0, 2.0, 0.0, 0.0});  // ||w||^2 = 5
  const Tensor z({2, 2}, {3.0, 4.0, 0.0, 0.0});         // sum ||z_i||^2 = 25, mean 12.5
  CHECK(bound_regularizer(head, z, 1.0, 0.0) == 5.0);
  CHECK(bound_regularizer(head, z, 0.0, 2.0) == 25.0);
  CHECK(bound_regularizer(head, z, 0.0, 0.0) == 0.0);
  CHECK_THROWS_AS(bound_regularizer(head, z, -1.0, 0.0), UsageError);
  CHECK_THROWS_AS(bound_regularizer(head, Tensor({2, 3}), 1.0, 1.0), DimensionError);

  for (int t = 0; t < 50; ++t) {
    MarginHead h = MarginHead::build(4, 6, rng);
    Tensor f({5, 6});
    for (double& v : f.values()) v = rng.normal();
    const double a = rng.uniform(), b = rng.uniform();
    double w2 = 0, z2 = 0;
    for (double v : h.weight.values()) w2 += v * v;
    for (double v : f.values()) z2 += v * v;
    REQUIRE(std::abs(bound_regularizer(h, f, a, b) - (a * w2 + b * z2 / 5.0)) < 1e-12);
    REQUIRE(bound_regularizer(h, f, a + 0.1, b) >= bound_regularizer(h, f, a, b));
    REQUIRE(bound_regularizer(h, f, a, b + 0.1) >= bound_regularizer(h, f, a, b));
  }
}

TEST_CASE("tape losses agree with the scalar losses and with finite differences") {
  RngStream rng(6);
  const std::vector<int> labels{0, 2, 1, 2};
  Tensor s({4, 3});
  for (double& v : s.values()) v = rng.uniform(-3.0, 3.0);
  Tensor w({3, 5}), z({4, 5});
  for (double& v : w.values()) v = rng.normal();
  for (double& v : z.values()) v = rng.normal();

  for (BaseLoss base : {BaseLoss::modified_huber, BaseLoss::cross_entropy}) {
    CAPTURE(to_string(base));
    double expect = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      std::span<const double> row(s.data() + 3 * i, 3);
      const auto label = static_cast<std::size_t>(labels[i]);
      expect += base == BaseLoss::modified_huber ? multiclass_margin_loss(row, label) : cross_entropy(row, label);
    }
    expect /= 4.0;
    const LossConfig config{base, 0.01, 0.05};
    auto value = [&] {
      Tape tape(false);
      const ForwardPass pass{tape.parameter(z), tape.parameter(s)};
      return tape.value(objective(tape, config, pass, tape.parameter(w), labels))[0];
    };
    Tape tape;
    const ForwardPass pass{tape.parameter(z), tape.parameter(s)};
    const Var wv = tape.parameter(w);
    const Var loss = objective(tape, config, pass, wv, labels);
    double w2 = 0, z2 = 0;
    for (double v : w.values()) w2 += v * v;
    for (double v : z.values()) z2 += v * v;
    CHECK(std::abs(tape.value(loss)[0] - (expect + 0.01 * w2 + 0.05 * z2 / 4.0)) < 1e-12);
    tape.backward(loss);
    CHECK(fd::max_rel_error(fd::gradient(s, value), tape.grad(pass.scores)) < 1e-6);
    CHECK(fd::max_rel_error(fd::gradient(w, value), tape.grad(wv)) < 1e-6);
    CHECK(fd::max_rel_error(fd::gradient(z, value), tape.grad(pass.features)) < 1e-6);
  }
}

TEST_CASE("objective without the penalty is the base loss") {
  Tape tape;
  const std::vector<int> labels{1};
  const ForwardPass pass{tape.parameter(Tensor({1, 2}, 1.0)), tape.parameter(Tensor({1, 2}, {0.2, 0.4}))};
  const Var w = tape.parameter(Tensor({2, 2}, 1.0));
  const Var loss = objective(tape, LossConfig{BaseLoss::cross_entropy, 0.0, 0.0}, pass, w, labels);
  CHECK(tape.value(loss)[0] == cross_entropy(std::vector<double>{0.2, 0.4}, 1));
  CHECK_THROWS_AS(objective(tape, LossConfig{BaseLoss::cross_entropy, 0.0, 0.0}, pass, w, std::vector<int>{5}),
                  UsageError);
  CHECK_THROWS_AS(objective(tape, LossConfig{BaseLoss::cross_entropy, 0.0, 0.0}, pass, w, std::vector<int>{0, 1}),
                  DimensionError);
}

TEST_CASE("base loss names") {
  CHECK(parse_base_loss("ce") == BaseLoss::cross_entropy);
  CHECK(parse_base_loss("mh") == BaseLoss::modified_huber);
  CHECK(parse_base_loss("ml") == BaseLoss::modified_huber);
  CHECK_THROWS_AS(parse_base_loss("hinge"), UsageError);
}

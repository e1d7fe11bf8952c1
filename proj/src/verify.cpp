#include "hyperbound/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "hyperbound/bounds.hpp"
#include "hyperbound/errors.hpp"
#include "hyperbound/loss.hpp"

namespace hyperbound {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// ---------------------------------------------------------------------------
// Network gradient check

struct GradProblem {
  Model model;
  Tensor batch;
  std::vector<int> labels;
  LossConfig loss;
  std::uint64_t dropout_seed = 0;
};

RngStream dropout_stream(const GradProblem& p) { return RngStream::derive(p.dropout_seed, {7}); }

double objective_value(const GradProblem& p) {
  Tape tape(false);
  const ModelVars vars = bind_parameters(tape, p.model);
  const Var input = tape.constant(p.batch);
  RngStream rng = dropout_stream(p);
  const ForwardPass pass = forward(tape, p.model, vars, input, Mode::train, rng);
  return tape.value(objective(tape, p.loss, pass, vars.head_weight, p.labels))[0];
}

// Which linear piece every kinked unit is on: ReLU input signs, the argmax
// of every pooling window and the modified Huber branch of every score.
std::vector<int> piece_signature(const GradProblem& p) {
  std::vector<int> sig;
  Tape tape(false);
  const ModelVars vars = bind_parameters(tape, p.model);
  Var h = tape.constant(p.batch);
  RngStream rng = dropout_stream(p);
  const auto& layers = p.model.feature_map.layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Tensor& in = tape.value(h);
    if (std::holds_alternative<ReluSpec>(layers[i].spec)) {
      for (double v : in.values()) sig.push_back(v > 0.0);
    } else if (std::holds_alternative<MaxPool2Spec>(layers[i].spec)) {
      const std::size_t n = in.dim(0), c = in.dim(1), ih = in.dim(2), iw = in.dim(3);
      for (std::size_t b = 0; b < n * c; ++b) {
        const double* plane = in.data() + b * ih * iw;
        for (std::size_t r = 0; r + 1 < ih; r += 2) {
          for (std::size_t col = 0; col + 1 < iw; col += 2) {
            int best = 0;
            double bv = plane[r * iw + col];
            for (int k = 1; k < 4; ++k) {
              const double v = plane[(r + k / 2) * iw + col + k % 2];
              if (v > bv) {
                bv = v;
                best = k;
              }
            }
            sig.push_back(best);
          }
        }
      }
    }
    h = apply_layer(tape, layers[i].spec, layers[i].input_shape, vars.layers[i], h, Mode::train, rng);
  }
  if (p.loss.base == BaseLoss::modified_huber) {
    const Var scores = ops::affine(tape, h, vars.head_weight, vars.head_bias);
    const Tensor& s = tape.value(scores);
    const std::size_t classes = s.dim(1);
    for (std::size_t i = 0; i < s.dim(0); ++i) {
      for (std::size_t c = 0; c < classes; ++c) {
        const double q = (static_cast<int>(c) == p.labels[i] ? 1.0 : -1.0) * s[i * classes + c];
        sig.push_back(q <= -1.0 ? 0 : (q <= 1.0 ? 1 : 2));
      }
    }
  }
  return sig;
}

GradProblem make_problem(Architecture arch, RngStream& rng, std::size_t index) {
  GradProblem p;
  RngStream init = RngStream::derive(rng.next(), {0});
  Shape input_shape;
  std::size_t batch = 0;
  std::size_t classes = 0;
  if (arch == Architecture::lenet) {
    LenetOptions o;
    o.activation = index % 3 == 2 ? Activation::tanh : Activation::relu;
    o.dropout = index % 4 == 1 ? 0.3 : 0.0;
    p.model = make_lenet(o, init);
    input_shape = o.input_shape;
    batch = 2;
    classes = o.n_classes;
  } else {
    MlpOptions o;
    o.input_shape = {6};
    o.widths = {8, 5};
    o.activation = index % 3 == 2 ? Activation::tanh : Activation::relu;
    o.dropout = index % 4 == 1 ? 0.3 : 0.0;
    o.n_classes = 3;
    p.model = make_mlp(o, init);
    input_shape = o.input_shape;
    batch = 4;
    classes = o.n_classes;
  }
  Shape bshape{batch};
  bshape.insert(bshape.end(), input_shape.begin(), input_shape.end());
  p.batch = Tensor(bshape);
  for (double& v : p.batch.values()) v = rng.normal();
  for (std::size_t i = 0; i < batch; ++i) p.labels.push_back(static_cast<int>(rng.below(classes)));
  p.loss.base = index % 2 == 0 ? BaseLoss::modified_huber : BaseLoss::cross_entropy;
  p.loss.alpha = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
  p.loss.beta = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
  p.dropout_seed = rng.next();
  return p;
}

}  // namespace

std::string SuiteResult::summary() const {
  std::ostringstream out;
  char err[32];
  std::snprintf(err, sizeof err, "%.3g", max_error);
  char secs[32];
  std::snprintf(secs, sizeof secs, "%.2f", seconds);
  out << name << ": " << passed << '/' << trials << " passed";
  if (skipped) out << ", " << skipped << " skipped";
  if (max_error > 0.0) out << ", max rel err " << err;
  out << " (" << secs << " s)";
  if (!detail.empty()) out << "; " << detail;
  return out.str();
}

SuiteResult check_huber_gradients(std::size_t points, std::uint64_t seed, double tolerance) {
  const auto start = Clock::now();
  SuiteResult r;
  r.name = "modified Huber gradient";
  const double h = 1e-5;
  const double guard = std::max(1e-6, 2.0 * h);
  RngStream rng = RngStream::derive(seed, {101});
  while (r.trials < points) {
    const double s = rng.uniform(-4.0, 4.0);
    const int y = rng.below(2) ? 1 : -1;
    const double q = y * s;
    if (std::abs(q + 1.0) < guard || std::abs(q - 1.0) < guard) {
      ++r.skipped;
      continue;
    }
    const double analytic = modified_huber_grad(s, y);
    const double numeric = (modified_huber(s + h, y) - modified_huber(s - h, y)) / (2.0 * h);
    const double e = rel_error(analytic, numeric);
    r.max_error = std::max(r.max_error, e);
    ++r.trials;
    if (e < tolerance) {
      ++r.passed;
    } else if (r.detail.empty()) {
      std::ostringstream d;
      d.precision(17);
      d << "s=" << s << " y=" << y << " analytic=" << analytic << " numeric=" << numeric;
      r.detail = d.str();
    }
  }
  r.seconds = seconds_since(start);
  return r;
}

SuiteResult check_network_gradients(Architecture arch, std::size_t points, std::uint64_t seed,
                                    const GradCheckOptions& options) {
  const auto start = Clock::now();
  SuiteResult r;
  r.name = std::string("objective gradient (") + to_string(arch) + ")";
  RngStream rng = RngStream::derive(seed, {arch == Architecture::lenet ? 202u : 203u});
  const double h = options.step;

  for (std::size_t point = 0; point < points; ++point) {
    GradProblem p = make_problem(arch, rng, point);

    Tape tape;
    const ModelVars vars = bind_parameters(tape, p.model);
    const Var input = tape.constant(p.batch);
    RngStream drop = dropout_stream(p);
    const ForwardPass pass = forward(tape, p.model, vars, input, Mode::train, drop);
    const Var loss = objective(tape, p.loss, pass, vars.head_weight, p.labels);
    tape.backward(loss);

    std::vector<ParameterSlot> slots = p.model.parameters();
    const std::size_t per_tensor = std::max<std::size_t>(1, options.coords_per_point / slots.size());
    bool point_ok = true;
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const auto grad = tape.grad(vars.flat[k]);
      auto values = slots[k].tensor->values();
      for (std::size_t j = 0; j < per_tensor; ++j) {
        const std::size_t idx = static_cast<std::size_t>(rng.below(values.size()));
        const double saved = values[idx];
        values[idx] = saved + h;
        const double fp = objective_value(p);
        const auto sig_p = piece_signature(p);
        values[idx] = saved - h;
        const double fm = objective_value(p);
        const auto sig_m = piece_signature(p);
        values[idx] = saved;
        if (sig_p != sig_m) {
          ++r.skipped;
          continue;
        }
        const double numeric = (fp - fm) / (2.0 * h);
        const double e = rel_error(grad[idx], numeric);
        r.max_error = std::max(r.max_error, e);
        if (!(e < options.tolerance)) {
          point_ok = false;
          if (r.detail.empty()) {
            std::ostringstream d;
            d.precision(12);
            d << "point " << point << " " << slots[k].name << "[" << idx << "] analytic=" << grad[idx]
              << " numeric=" << numeric;
            r.detail = d.str();
          }
        }
      }
    }
    ++r.trials;
    if (point_ok) ++r.passed;
  }
  r.seconds = seconds_since(start);
  return r;
}

SuiteResult novikoff_suite(std::size_t instances, std::uint64_t seed) {
  const auto start = Clock::now();
  SuiteResult r;
  r.name = "Novikoff bound";
  RngStream rng = RngStream::derive(seed, {301});
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t dim = 2 + static_cast<std::size_t>(rng.below(2));
    const std::size_t l = 10 + static_cast<std::size_t>(rng.below(41));
    const double rho0 = rng.uniform(0.05, 0.25);
    ++r.trials;
    try {
      const LabeledVectors data = synth_separable(l, dim, rho0, 1.0, rng.next());
      const MaxMarginResult mm = exact_max_margin(data, false);
      double d2 = 0.0;
      for (const auto& x : data.points) d2 = std::max(d2, std::inner_product(x.begin(), x.end(), x.begin(), 0.0));
      const std::int64_t limit = novikoff_steps(std::sqrt(d2), mm.rho);
      const PerceptronResult pr = perceptron_corrections(data, 1'000'000);
      if (pr.converged && static_cast<std::int64_t>(pr.corrections) <= limit) {
        ++r.passed;
      } else if (r.detail.empty()) {
        r.detail = "instance " + std::to_string(i) + ": corrections=" + std::to_string(pr.corrections) +
                   " limit=" + std::to_string(limit) + (pr.converged ? "" : " (not converged)");
      }
    } catch (const std::exception& e) {
      if (r.detail.empty()) r.detail = "instance " + std::to_string(i) + ": " + e.what();
    }
  }
  r.seconds = seconds_since(start);
  return r;
}

LooSuiteResult loo_suite(std::size_t instances, std::uint64_t seed) {
  const auto start = Clock::now();
  LooSuiteResult out;
  out.bound.name = "LOO errors <= support vectors";
  out.uniqueness.name = "max-margin uniqueness under permutation";
  RngStream rng = RngStream::derive(seed, {401});
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t l = 6 + static_cast<std::size_t>(rng.below(7));
    const double rho0 = rng.uniform(0.05, 0.3);
    const double ox = rng.uniform(-2.0, 2.0);
    const double oy = rng.uniform(-2.0, 2.0);
    ++out.bound.trials;
    ++out.uniqueness.trials;
    try {
      LabeledVectors data = synth_separable(l, 2, rho0, 1.0, rng.next());
      for (auto& x : data.points) {
        x[0] += ox;
        x[1] += oy;
      }
      data.radius.reset();
      data.margin.reset();
      const MaxMarginResult mm = exact_max_margin(data, true);
      const std::size_t errors = loo_errors(data);
      if (errors <= mm.support.size()) {
        ++out.bound.passed;
      } else if (out.bound.detail.empty()) {
        out.bound.detail = "instance " + std::to_string(i) + ": loo=" + std::to_string(errors) +
                           " support=" + std::to_string(mm.support.size());
      }

      std::vector<std::size_t> perm(l);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(perm));
      LabeledVectors shuffled;
      for (std::size_t k : perm) {
        shuffled.points.push_back(data.points[k]);
        shuffled.labels.push_back(data.labels[k]);
      }
      const MaxMarginResult mp = exact_max_margin(shuffled, true);
      bool same = std::abs(mp.b - mm.b) <= 1e-9;
      for (std::size_t k = 0; k < mm.w.size(); ++k) same = same && std::abs(mp.w[k] - mm.w[k]) <= 1e-9;
      std::vector<std::size_t> mapped;
      for (std::size_t s : mp.support) mapped.push_back(perm[s]);
      std::sort(mapped.begin(), mapped.end());
      same = same && mapped == mm.support;
      if (same) {
        ++out.uniqueness.passed;
      } else if (out.uniqueness.detail.empty()) {
        out.uniqueness.detail = "instance " + std::to_string(i) + ": permuted solution differs";
      }
    } catch (const std::exception& e) {
      const std::string msg = "instance " + std::to_string(i) + ": " + e.what();
      if (out.bound.detail.empty()) out.bound.detail = msg;
      if (out.uniqueness.detail.empty()) out.uniqueness.detail = msg;
    }
  }
  out.bound.seconds = out.uniqueness.seconds = seconds_since(start);
  return out;
}

}  // namespace hyperbound

#include "hyperbound/bounds.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "hyperbound/errors.hpp"
#include "json.hpp"

namespace hyperbound {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw DomainError(what);
}

}  // namespace

double empirical_risk(std::span<const double> losses) {
  if (losses.empty()) throw UsageError("empirical_risk: empty loss list");
  double total = 0.0;
  for (double v : losses) total += v;
  return total / static_cast<double>(losses.size());
}

double epsilon_l(double l, double h, double eta) {
  require(l >= 1.0, "epsilon_l: l must be >= 1");
  require(h >= 1.0, "epsilon_l: h must be >= 1");
  require(eta > 0.0 && eta < 1.0, "epsilon_l: eta must be in (0, 1)");
  return 4.0 * (h * (std::log(2.0 * l / h) + 1.0) - std::log(eta / 4.0)) / l;
}

double risk_bound(double remp, double B, double eps) {
  require(remp >= 0.0, "risk_bound: empirical risk must be >= 0");
  require(B > 0.0, "risk_bound: B must be positive");
  require(eps > 0.0, "risk_bound: epsilon must be positive");
  const double be = B * eps;
  return remp + be / 2.0 * (1.0 + std::sqrt(1.0 + 4.0 * remp / be));
}

std::int64_t vc_bound(double R, double Delta, std::int64_t n) {
  require(R > 0.0 && Delta > 0.0, "vc_bound: R and Delta must be positive");
  require(n >= 1, "vc_bound: n must be >= 1");
  const double ratio = std::floor(R * R / (Delta * Delta));
  const double capped = std::min(ratio, static_cast<double>(n));
  return static_cast<std::int64_t>(capped) + 1;
}

double p_error_bound(double m, double l, double h, double eta) {
  require(m >= 0.0 && m <= l, "p_error_bound: m must be in [0, l]");
  const double xi = epsilon_l(l, h, eta);
  return m / l + xi / 2.0 * (1.0 + std::sqrt(1.0 + 4.0 * m / (l * xi)));
}

std::int64_t novikoff_steps(double D, double rho) {
  require(rho > 0.0 && D >= rho, "novikoff_steps: requires D >= rho > 0");
  return static_cast<std::int64_t>(std::floor(D * D / (rho * rho)));
}

ErBounds er_bounds(double K, double D, double rho, double l) {
  require(K >= 0.0, "er_bounds: K must be >= 0");
  require(l >= 1.0, "er_bounds: l must be >= 1");
  require(D >= 0.0 && rho > 0.0, "er_bounds: requires D >= 0 and rho > 0");
  ErBounds e;
  e.er_sv = K / (l + 1.0);
  const double ratio = D / rho;
  e.er_novikoff = ratio * ratio / (l + 1.0);
  e.er_min = std::min(e.er_sv, e.er_novikoff);
  return e;
}

namespace {

std::int64_t novikoff_or_zero(double D, double rho) { return D >= rho ? novikoff_steps(D, rho) : 0; }

}  // namespace

BoundReport report_from_inputs(const BoundInputs& in) {
  BoundReport r;
  r.l = static_cast<std::size_t>(in.l);
  r.feature_dim = static_cast<std::size_t>(in.n);
  r.eta = in.eta;
  r.B = in.B;
  r.D_l = in.D;
  r.remp = in.remp;
  r.rho_min = in.rho;
  r.dl2w2_max = (in.D / in.rho) * (in.D / in.rho);
  r.k_hat_mean = in.K;
  r.h_bound = (in.R > 0.0 && in.Delta > 0.0) ? vc_bound(in.R, in.Delta, in.n) : static_cast<std::int64_t>(in.h);
  r.epsilon = epsilon_l(in.l, static_cast<double>(r.h_bound), in.eta);
  r.risk = risk_bound(in.remp, in.B, r.epsilon);
  r.novikoff_m = novikoff_or_zero(in.D, in.rho);
  r.p_error = p_error_bound(in.m_errors, in.l, static_cast<double>(r.h_bound), in.eta);
  const ErBounds e = er_bounds(in.K, in.D, in.rho, in.l);
  r.er_sv = e.er_sv;
  r.er_novikoff = e.er_novikoff;
  r.er_min = e.er_min;
  return r;
}

MarginRadius margin_radius(const MarginHead& head, const Tensor& features) {
  if (features.rank() != 2 || features.dim(1) != head.dim()) {
    throw DimensionError("margin_radius: features " + shape_string(features.shape()) + " do not match head");
  }
  MarginRadius out;
  const std::size_t m = features.dim(1);
  for (std::size_t i = 0; i < features.dim(0); ++i) {
    double n2 = 0.0;
    for (std::size_t k = 0; k < m; ++k) n2 += features[i * m + k] * features[i * m + k];
    out.D_l = std::max(out.D_l, std::sqrt(n2));
  }
  for (std::size_t c = 0; c < head.n_classes(); ++c) {
    double w2 = 0.0;
    for (double v : head.class_weight(c)) w2 += v * v;
    if (!(w2 > 0.0)) throw DomainError("margin undefined: class " + std::to_string(c) + " has zero weight norm");
    out.rho.push_back(1.0 / std::sqrt(w2));
    out.dl2w2.push_back(out.D_l * out.D_l * w2);
  }
  return out;
}

MarginRadius margin_radius(const Model& model, const Dataset& dataset) {
  return margin_radius(model.head, evaluate(model, dataset.images).features);
}

SupportSet support_vectors(std::span<const double> scores, double tol) {
  if (!(tol >= 0.0)) throw UsageError("support_vectors: tolerance must be >= 0");
  SupportSet s;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double a = std::abs(scores[i]);
    if (a <= 1.0 + tol) {
      s.indices.push_back(i);
      if (a >= 1.0 - tol) ++s.essential;
    }
  }
  return s;
}

std::vector<SupportSet> support_vectors(const Tensor& scores, double tol) {
  if (scores.rank() != 2) throw DimensionError("support_vectors: scores must be [N, C]");
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  std::vector<SupportSet> out;
  std::vector<double> column(n);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < n; ++i) column[i] = scores[i * c + k];
    out.push_back(support_vectors(column, tol));
  }
  return out;
}

BoundReport bound_report(const MarginHead& head, const Tensor& features, const Tensor& scores,
                         std::span<const int> labels, double tol, double eta) {
  const std::size_t n = features.dim(0);
  if (n == 0 || scores.rank() != 2 || scores.dim(0) != n || labels.size() != n ||
      scores.dim(1) != head.n_classes()) {
    throw DimensionError("bound_report: features, scores and labels disagree");
  }
  const std::size_t n_classes = head.n_classes();
  const MarginRadius mr = margin_radius(head, features);
  const auto sv = support_vectors(scores, tol);

  BoundReport r;
  r.l = n;
  r.feature_dim = head.dim();
  r.eta = eta;
  r.D_l = mr.D_l;
  std::size_t errors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Prediction p = predict(scores.values().subspan(i * n_classes, n_classes));
    if (static_cast<int>(p.label) != labels[i]) ++errors;
  }
  r.remp = static_cast<double>(errors) / static_cast<double>(n);

  const double l = static_cast<double>(n);
  r.rho_min = std::numeric_limits<double>::infinity();
  double k_total = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    ClassBounds cb;
    cb.label = c;
    cb.rho = mr.rho[c];
    cb.w_norm2 = 1.0 / (cb.rho * cb.rho);
    cb.dl2w2 = mr.dl2w2[c];
    cb.support = sv[c].indices.size();
    cb.k_hat = sv[c].essential;
    for (std::size_t i = 0; i < n; ++i) {
      const double y = labels[i] == static_cast<int>(c) ? 1.0 : -1.0;
      if (y * scores[i * n_classes + c] < 1.0) ++cb.margin_errors;
    }
    const double radius = std::max(mr.D_l, std::numeric_limits<double>::min());
    cb.h = vc_bound(radius, cb.rho, static_cast<std::int64_t>(head.dim()));
    cb.p_error = p_error_bound(static_cast<double>(cb.margin_errors), l, static_cast<double>(cb.h), eta);
    const ErBounds e = er_bounds(static_cast<double>(cb.k_hat), mr.D_l, cb.rho, l);
    cb.er_sv = e.er_sv;
    cb.er_novikoff = e.er_novikoff;
    cb.er_min = e.er_min;

    r.rho_min = std::min(r.rho_min, cb.rho);
    r.dl2w2_max = std::max(r.dl2w2_max, cb.dl2w2);
    r.h_bound = std::max(r.h_bound, cb.h);
    r.p_error = std::max(r.p_error, cb.p_error);
    r.er_sv = std::max(r.er_sv, cb.er_sv);
    r.er_novikoff = std::max(r.er_novikoff, cb.er_novikoff);
    k_total += static_cast<double>(cb.k_hat);
    r.classes.push_back(cb);
  }
  r.k_hat_mean = k_total / static_cast<double>(n_classes);
  r.er_min = std::min(r.er_sv, r.er_novikoff);
  r.epsilon = epsilon_l(l, static_cast<double>(r.h_bound), eta);
  r.risk = risk_bound(r.remp, r.B, r.epsilon);
  r.novikoff_m = novikoff_or_zero(r.D_l, r.rho_min);
  return r;
}

BoundReport bound_report(const Model& model, const Dataset& dataset, double tol, double eta) {
  const Evaluation ev = evaluate(model, dataset.images);
  return bound_report(model.head, ev.features, ev.scores, dataset.labels, tol, eta);
}

std::string BoundReport::to_json() const {
  nlohmann::json classes_json = nlohmann::json::array();
  for (const ClassBounds& c : classes) {
    classes_json.push_back({{"class", c.label},
                            {"rho", c.rho},
                            {"w_norm2", c.w_norm2},
                            {"dl2w2", c.dl2w2},
                            {"support", c.support},
                            {"k_hat", c.k_hat},
                            {"margin_errors", c.margin_errors},
                            {"h", c.h},
                            {"p_error", c.p_error},
                            {"er_sv", c.er_sv},
                            {"er_novikoff", c.er_novikoff},
                            {"er_min", c.er_min}});
  }
  const nlohmann::json doc{{"l", l},
                           {"feature_dim", feature_dim},
                           {"eta", eta},
                           {"B", B},
                           {"D_l", D_l},
                           {"remp", remp},
                           {"rho_min", rho_min},
                           {"dl2w2_max", dl2w2_max},
                           {"k_hat_mean", k_hat_mean},
                           {"h_bound", h_bound},
                           {"epsilon_l", epsilon},
                           {"risk_bound", risk},
                           {"novikoff_M", novikoff_m},
                           {"p_error", p_error},
                           {"er_sv", er_sv},
                           {"er_novikoff", er_novikoff},
                           {"er_min", er_min},
                           {"classes", classes_json}};
  return doc.dump(2);
}

std::string BoundReport::to_table() const {
  std::ostringstream out;
  char line[256];
  auto row = [&](const char* name, double v) {
    std::snprintf(line, sizeof line, "  %-16s %14.6g\n", name, v);
    out << line;
  };
  out << "bound report (l = " << l << ", m = " << feature_dim << ", eta = " << eta << ")\n";
  row("D_l", D_l);
  row("R_emp", remp);
  row("rho_min", rho_min);
  row("D^2|w|^2 max", dl2w2_max);
  row("K_hat mean", k_hat_mean);
  row("h bound", static_cast<double>(h_bound));
  row("epsilon_l", epsilon);
  row("risk bound", risk);
  row("Novikoff M", static_cast<double>(novikoff_m));
  row("P_error", p_error);
  row("ER (SV)", er_sv);
  row("ER (Novikoff)", er_novikoff);
  row("ER (min)", er_min);
  if (!classes.empty()) {
    out << "  class        rho     D^2|w|^2    K_hat  margin_err      h    P_error\n";
    for (const ClassBounds& c : classes) {
      std::snprintf(line, sizeof line, "  %5zu %10.4g %12.4g %8zu %11zu %6lld %10.4g\n", c.label, c.rho, c.dl2w2,
                    c.k_hat, c.margin_errors, static_cast<long long>(c.h), c.p_error);
      out << line;
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Perceptron

PerceptronResult perceptron_corrections(const LabeledVectors& data, std::size_t max_epochs,
                                        std::vector<double> warm_start) {
  data.validate();
  const std::size_t dim = data.dim();
  PerceptronResult r;
  r.w = warm_start.empty() ? std::vector<double>(dim, 0.0) : std::move(warm_start);
  if (r.w.size() != dim) throw DimensionError("perceptron: warm start has wrong dimension");
  for (r.epochs = 0; r.epochs < max_epochs;) {
    ++r.epochs;
    std::size_t mistakes = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& x = data.points[i];
      const double y = data.labels[i];
      double dot = 0.0;
      for (std::size_t k = 0; k < dim; ++k) dot += r.w[k] * x[k];
      if (y * dot <= 0.0) {
        for (std::size_t k = 0; k < dim; ++k) r.w[k] += y * x[k];
        ++mistakes;
      }
    }
    r.corrections += mistakes;
    if (mistakes == 0) {
      r.converged = true;
      break;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Exact max-margin oracle

namespace {

struct Candidate {
  Eigen::VectorXd w;
  double b = 0.0;
  double norm2 = std::numeric_limits<double>::infinity();
};

// Minimum-norm w with y_i (w . x_i + b) = 1 on `subset`; false if the system
// is inconsistent.
bool solve_equalities(const std::vector<Eigen::VectorXd>& x, std::span<const int> y,
                      std::span<const std::size_t> subset, bool with_bias, Candidate& out) {
  const auto k = static_cast<Eigen::Index>(subset.size());
  const Eigen::Index n = with_bias ? k + 1 : k;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < k; ++i) {
    const std::size_t pi = subset[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < k; ++j) {
      const std::size_t pj = subset[static_cast<std::size_t>(j)];
      a(i, j) = y[pi] * y[pj] * x[pi].dot(x[pj]);
    }
    rhs(i) = 1.0;
    if (with_bias) {
      a(i, k) = y[pi];
      a(k, i) = y[pi];
    }
  }
  const Eigen::VectorXd sol = a.completeOrthogonalDecomposition().solve(rhs);
  out.w = Eigen::VectorXd::Zero(x.front().size());
  for (Eigen::Index i = 0; i < k; ++i) {
    const std::size_t pi = subset[static_cast<std::size_t>(i)];
    out.w += sol(i) * y[pi] * x[pi];
  }
  out.b = with_bias ? sol(k) : 0.0;
  for (std::size_t pi : subset) {
    if (std::abs(y[pi] * (out.w.dot(x[pi]) + out.b) - 1.0) > 1e-9) return false;
  }
  out.norm2 = out.w.squaredNorm();
  return true;
}

bool feasible(const std::vector<Eigen::VectorXd>& x, std::span<const int> y, const Candidate& c) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] * (c.w.dot(x[i]) + c.b) < 1.0 - 1e-9) return false;
  }
  return true;
}

template <class Fn>
void for_each_subset(std::size_t n, std::size_t k, Fn&& fn) {
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    fn(std::span<const std::size_t>(idx));
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

}  // namespace

MaxMarginResult exact_max_margin(const LabeledVectors& data, bool with_bias) {
  data.validate();
  const std::size_t l = data.size();
  const std::size_t dim = data.dim();
  std::vector<Eigen::VectorXd> x(l);
  for (std::size_t i = 0; i < l; ++i) x[i] = Eigen::Map<const Eigen::VectorXd>(data.points[i].data(), dim);
  const std::span<const int> y(data.labels);

  Candidate best;
  Candidate trial;
  const std::size_t max_size = std::min(l, with_bias ? dim + 1 : dim);
  for (std::size_t k = 1; k <= max_size; ++k) {
    for_each_subset(l, k, [&](std::span<const std::size_t> subset) {
      if (with_bias) {
        bool pos = false, neg = false;
        for (std::size_t i : subset) (y[i] > 0 ? pos : neg) = true;
        if (!pos || !neg) return;
      }
      if (!solve_equalities(x, y, subset, with_bias, trial)) return;
      if (trial.norm2 >= best.norm2 - 1e-15 * best.norm2) return;
      if (!feasible(x, y, trial)) return;
      best = trial;
    });
  }
  if (!std::isfinite(best.norm2) || !(best.norm2 > 0.0)) {
    throw DataError(with_bias ? "exact_max_margin: sample is not linearly separable"
                              : "exact_max_margin: sample is not separable through the origin");
  }

  MaxMarginResult r;
  r.w.assign(best.w.data(), best.w.data() + best.w.size());
  r.b = best.b;
  r.rho = 1.0 / std::sqrt(best.norm2);
  for (std::size_t i = 0; i < l; ++i) {
    if (std::abs(y[i] * (best.w.dot(x[i]) + best.b) - 1.0) <= 1e-9) r.support.push_back(i);
  }
  return r;
}

std::size_t loo_errors(const LabeledVectors& data, const Trainer& trainer) {
  data.validate();
  std::size_t errors = 0;
  for (std::size_t held = 0; held < data.size(); ++held) {
    LabeledVectors rest;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (i == held) continue;
      rest.points.push_back(data.points[i]);
      rest.labels.push_back(data.labels[i]);
    }
    const bool both = std::count(rest.labels.begin(), rest.labels.end(), 1) > 0 &&
                      std::count(rest.labels.begin(), rest.labels.end(), -1) > 0;
    if (!both) {
      ++errors;
      continue;
    }
    const MaxMarginResult fit = trainer(rest);
    double s = fit.b;
    for (std::size_t k = 0; k < fit.w.size(); ++k) s += fit.w[k] * data.points[held][k];
    if (data.labels[held] * s <= 0.0) ++errors;
  }
  return errors;
}

std::size_t loo_errors(const LabeledVectors& data) {
  return loo_errors(data, [](const LabeledVectors& d) { return exact_max_margin(d, true); });
}

}  // namespace hyperbound

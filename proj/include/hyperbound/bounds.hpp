#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hyperbound/data.hpp"
#include "hyperbound/model.hpp"

namespace hyperbound {

// ---------------------------------------------------------------------------
// Closed-form bounds

/// Mean of per-example losses.
double empirical_risk(std::span<const double> losses);

/// 4 (h (ln(2l/h) + 1) - ln(eta/4)) / l. The same expression serves as xi in
/// the margin-error corollary.
double epsilon_l(double l, double h, double eta);

/// remp + B eps / 2 * (1 + sqrt(1 + 4 remp / (B eps))).
double risk_bound(double remp, double B, double eps);

/// min(floor(R^2 / Delta^2), n) + 1.
std::int64_t vc_bound(double R, double Delta, std::int64_t n);

/// m/l + xi/2 (1 + sqrt(1 + 4m/(l xi))) with xi = epsilon_l(l, h, eta).
double p_error_bound(double m, double l, double h, double eta);

/// floor(D^2 / rho^2), the Novikoff limit on perceptron corrections.
std::int64_t novikoff_steps(double D, double rho);

struct ErBounds {
  double er_sv = 0.0;        // K / (l + 1)
  double er_novikoff = 0.0;  // (D / rho)^2 / (l + 1)
  double er_min = 0.0;
};
ErBounds er_bounds(double K, double D, double rho, double l);

/// Every raw quantity a BoundReport can be computed from.
struct BoundInputs {
  double l = 1;
  double h = 1;
  double eta = 0.05;
  double B = 1.0;
  double D = 1.0;
  double rho = 1.0;
  double Delta = 1.0;
  double R = 1.0;
  std::int64_t n = 1;
  double m_errors = 0.0;
  double K = 0.0;
  double remp = 0.0;
};

// ---------------------------------------------------------------------------
// Estimates on a trained model

struct ClassBounds {
  std::size_t label = 0;
  double rho = 0.0;         // 1 / |w_c|
  double w_norm2 = 0.0;     // |w_c|^2
  double dl2w2 = 0.0;       // D_l^2 |w_c|^2 = (D_l / rho_c)^2
  std::size_t support = 0;  // |s_c(x_i)| <= 1 + tol
  std::size_t k_hat = 0;    // |s_c(x_i)| within tol of 1
  std::size_t margin_errors = 0;  // y_ic s_c(x_i) < 1
  std::int64_t h = 0;
  double p_error = 0.0;
  double er_sv = 0.0;
  double er_novikoff = 0.0;
  double er_min = 0.0;
};

struct BoundReport {
  std::size_t l = 0;
  std::size_t feature_dim = 0;
  double eta = 0.05;
  double B = 1.0;
  double D_l = 0.0;
  double remp = 0.0;
  std::vector<ClassBounds> classes;
  // Summary over the one-vs-rest classifiers (worst class for each quantity).
  double rho_min = 0.0;
  double dl2w2_max = 0.0;
  double k_hat_mean = 0.0;
  std::int64_t h_bound = 0;
  double epsilon = 0.0;
  double risk = 0.0;
  std::int64_t novikoff_m = 0;
  double p_error = 0.0;
  double er_sv = 0.0;
  double er_novikoff = 0.0;
  double er_min = 0.0;

  std::string to_json() const;
  std::string to_table() const;
};

/// Report from raw inputs: epsilon_l, risk_bound, vc_bound, novikoff_steps,
/// p_error_bound and er_bounds evaluated on `in` (in.h is replaced by
/// vc_bound(R, Delta, n) when R and Delta are positive).
BoundReport report_from_inputs(const BoundInputs& in);

struct MarginRadius {
  double D_l = 0.0;
  std::vector<double> rho;    // per class
  std::vector<double> dl2w2;  // per class
};

/// D_l = max_i |z_i| over rows of `features` [N, m]; rho_c = 1/|w_c|.
MarginRadius margin_radius(const MarginHead& head, const Tensor& features);
MarginRadius margin_radius(const Model& model, const Dataset& dataset);

struct SupportSet {
  std::vector<std::size_t> indices;  // |s| <= 1 + tol
  std::size_t essential = 0;         // |s| in [1 - tol, 1 + tol]
};
/// For one classifier's scores over the sample.
SupportSet support_vectors(std::span<const double> scores, double tol);
/// Per class, from scores [N, n_classes].
std::vector<SupportSet> support_vectors(const Tensor& scores, double tol);

/// Full report for a trained model on a sample. `tol` is the relative
/// support-vector tolerance.
BoundReport bound_report(const Model& model, const Dataset& dataset, double tol = 1e-2, double eta = 0.05);
BoundReport bound_report(const MarginHead& head, const Tensor& features, const Tensor& scores,
                         std::span<const int> labels, double tol = 1e-2, double eta = 0.05);

// ---------------------------------------------------------------------------
// Separable-sample experiments

struct PerceptronResult {
  std::vector<double> w;
  std::size_t corrections = 0;
  bool converged = false;
  std::size_t epochs = 0;
};

/// Rosenblatt perceptron through the origin: w <- w + y x whenever
/// y (w . x) <= 0, cycling until an epoch passes without a mistake.
PerceptronResult perceptron_corrections(const LabeledVectors& data, std::size_t max_epochs,
                                        std::vector<double> warm_start = {});

struct MaxMarginResult {
  std::vector<double> w;
  double b = 0.0;
  double rho = 0.0;                 // 1 / |w|
  std::vector<std::size_t> support; // points with y (w.x + b) within 1e-9 of 1
};

/// Maximal-margin hyperplane by exhaustive search over candidate support
/// subsets (size <= dim + 1, or <= dim through the origin). Each subset's
/// equality system y_i (w . x_i + b) = 1 is solved for the minimum-norm w;
/// the feasible candidate of smallest |w| is optimal. Intended for l <= 20
/// with bias (l <= 60 through the origin) and dim <= 3.
/// Throws DataError when no separating hyperplane exists.
MaxMarginResult exact_max_margin(const LabeledVectors& data, bool with_bias = true);

using Trainer = std::function<MaxMarginResult(const LabeledVectors&)>;

/// Leave-one-out error count: each point is held out, the trainer is run on
/// the rest, and the point counts as an error when y (w . x + b) <= 0.
/// A hold-out that would leave one class empty counts as an error.
std::size_t loo_errors(const LabeledVectors& data, const Trainer& trainer);
std::size_t loo_errors(const LabeledVectors& data);

}  // namespace hyperbound

#include "hyperbound/loss.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "hyperbound/errors.hpp"

namespace hyperbound {

std::string to_string(BaseLoss base) { return base == BaseLoss::cross_entropy ? "ce" : "mh"; }

BaseLoss parse_base_loss(const std::string& name) {
  if (name == "ce" || name == "cross_entropy") return BaseLoss::cross_entropy;
  if (name == "mh" || name == "ml" || name == "modified_huber") return BaseLoss::modified_huber;
  throw UsageError("unknown base loss '" + name + "'");
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw UsageError("loss weights alpha and beta must be >= 0");
}

namespace {

void check_label(int label) {
  if (label != 1 && label != -1) throw UsageError("binary label must be +1 or -1");
}

void check_class(std::size_t label, std::size_t n_classes) {
  if (label >= n_classes) {
    throw UsageError("class label " + std::to_string(label) + " out of range for " + std::to_string(n_classes) +
                     " classes");
  }
}

void check_score(double s) {
  if (!std::isfinite(s)) throw NumericError("non-finite score");
}

}  // namespace

double modified_huber(double score, int label) {
  check_label(label);
  check_score(score);
  const double q = label * score;
  if (q <= -1.0) return -4.0 * q;
  if (q <= 1.0) return (1.0 - q) * (1.0 - q);
  return 0.0;
}

double modified_huber_grad(double score, int label) {
  check_label(label);
  check_score(score);
  const double q = label * score;
  if (q <= -1.0) return -4.0 * label;
  if (q <= 1.0) return -2.0 * (1.0 - q) * label;
  return 0.0;
}

double multiclass_margin_loss(std::span<const double> scores, std::size_t label) {
  check_class(label, scores.size());
  double total = 0.0;
  for (std::size_t c = 0; c < scores.size(); ++c) total += modified_huber(scores[c], c == label ? 1 : -1);
  return total;
}

double cross_entropy(std::span<const double> scores, std::size_t label) {
  check_class(label, scores.size());
  for (double s : scores) check_score(s);
  const double peak = *std::max_element(scores.begin(), scores.end());
  double denom = 0.0;
  for (double s : scores) denom += std::exp(s - peak);
  return peak + std::log(denom) - scores[label];
}

double bound_regularizer(const MarginHead& head, const Tensor& features, double alpha, double beta) {
  LossConfig{BaseLoss::cross_entropy, alpha, beta}.validate();
  if (features.rank() != 2 || features.dim(1) != head.dim()) {
    throw DimensionError("bound_regularizer: features " + shape_string(features.shape()) +
                         " do not match head dimension " + std::to_string(head.dim()));
  }
  double w2 = 0.0;
  for (double v : head.weight.values()) w2 += v * v;
  double z2 = 0.0;
  for (double v : features.values()) z2 += v * v;
  return alpha * w2 + beta * z2 / static_cast<double>(features.dim(0));
}

namespace {

void check_batch(const Tensor& s, std::span<const int> labels) {
  if (s.rank() != 2 || s.dim(0) != labels.size()) {
    throw DimensionError("scores " + shape_string(s.shape()) + " do not match " + std::to_string(labels.size()) +
                         " labels");
  }
  for (int l : labels) {
    if (l < 0) throw UsageError("negative class label");
    check_class(static_cast<std::size_t>(l), s.dim(1));
  }
}

}  // namespace

Var margin_loss(Tape& tape, Var scores, std::span<const int> labels) {
  const Tensor& s = tape.value(scores);
  check_batch(s, labels);
  const std::size_t n = s.dim(0), c = s.dim(1);
  auto dscore = std::make_shared<std::vector<double>>(s.size());
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const int y = static_cast<std::size_t>(labels[i]) == k ? 1 : -1;
      const double v = s[i * c + k];
      total += modified_huber(v, y);
      (*dscore)[i * c + k] = modified_huber_grad(v, y) * inv_n;
    }
  }
  return tape.record(Tensor::vector({total * inv_n}), {scores}, [dscore](const BackwardArgs& a) {
    const double g = a.output_grad[0];
    for (std::size_t i = 0; i < dscore->size(); ++i) a.input_grads[0][i] += g * (*dscore)[i];
  });
}

Var cross_entropy_loss(Tape& tape, Var scores, std::span<const int> labels) {
  const Tensor& s = tape.value(scores);
  check_batch(s, labels);
  const std::size_t n = s.dim(0), c = s.dim(1);
  auto dscore = std::make_shared<std::vector<double>>(s.size());
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = s.data() + i * c;
    const double peak = *std::max_element(row, row + c);
    double denom = 0.0;
    for (std::size_t k = 0; k < c; ++k) denom += std::exp(row[k] - peak);
    const auto label = static_cast<std::size_t>(labels[i]);
    total += peak + std::log(denom) - row[label];
    for (std::size_t k = 0; k < c; ++k) {
      const double p = std::exp(row[k] - peak) / denom;
      (*dscore)[i * c + k] = (p - (k == label ? 1.0 : 0.0)) * inv_n;
    }
  }
  return tape.record(Tensor::vector({total * inv_n}), {scores}, [dscore](const BackwardArgs& a) {
    const double g = a.output_grad[0];
    for (std::size_t i = 0; i < dscore->size(); ++i) a.input_grads[0][i] += g * (*dscore)[i];
  });
}

Var bound_penalty(Tape& tape, Var head_weight, Var features, double alpha, double beta) {
  LossConfig{BaseLoss::cross_entropy, alpha, beta}.validate();
  const Tensor& z = tape.value(features);
  if (z.rank() != 2) throw DimensionError("bound_penalty: features must be [N, m]");
  const double n = static_cast<double>(z.dim(0));  // z dangles once the tape grows
  const Var w_term = ops::scale(tape, ops::sum_squares(tape, head_weight), alpha);
  const Var z_term =
      ops::scale(tape, ops::sum_squares(tape, features), beta / n);
  return ops::add(tape, w_term, z_term);
}

Var objective(Tape& tape, const LossConfig& config, const ForwardPass& pass, Var head_weight,
              std::span<const int> labels) {
  config.validate();
  const Var base = config.base == BaseLoss::modified_huber ? margin_loss(tape, pass.scores, labels)
                                                           : cross_entropy_loss(tape, pass.scores, labels);
  if (config.alpha == 0.0 && config.beta == 0.0) return base;
  return ops::add(tape, base, bound_penalty(tape, head_weight, pass.features, config.alpha, config.beta));
}

}  // namespace hyperbound

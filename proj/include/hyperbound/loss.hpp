#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "hyperbound/model.hpp"
#include "hyperbound/tape.hpp"
#include "hyperbound/tensor.hpp"

namespace hyperbound {

enum class BaseLoss { cross_entropy, modified_huber };

std::string to_string(BaseLoss base);
BaseLoss parse_base_loss(const std::string& name);  // "ce" | "mh" (long names accepted)

/// Base loss plus the hyperplane-bound regularizer
/// alpha * sum_c |w_c|^2 + beta * mean_i |z(x_i)|^2.
struct LossConfig {
  BaseLoss base = BaseLoss::cross_entropy;
  double alpha = 0.0;
  double beta = 0.0;

  void validate() const;
};

/// Zhang's modified Huber loss of a +-1 label at score s, with q = y*s:
/// -4q for q <= -1, (1-q)^2 for -1 < q <= 1, 0 above.
double modified_huber(double score, int label);
/// d/ds of modified_huber.
double modified_huber_grad(double score, int label);

/// Sum over classes of one-vs-rest modified Huber terms, +1 for `label`.
double multiclass_margin_loss(std::span<const double> scores, std::size_t label);
/// Softmax negative log-likelihood, computed with log-sum-exp.
double cross_entropy(std::span<const double> scores, std::size_t label);
/// features: [N, m]. Returns alpha * sum_c |w_c|^2 + beta * mean_i |z_i|^2.
/// Biases are not penalized.
double bound_regularizer(const MarginHead& head, const Tensor& features, double alpha, double beta);

// Tape versions. Base losses average over the batch.
Var margin_loss(Tape& tape, Var scores, std::span<const int> labels);
Var cross_entropy_loss(Tape& tape, Var scores, std::span<const int> labels);
Var bound_penalty(Tape& tape, Var head_weight, Var features, double alpha, double beta);
/// Full training objective for one batch.
Var objective(Tape& tape, const LossConfig& config, const ForwardPass& pass, Var head_weight,
              std::span<const int> labels);

}  // namespace hyperbound

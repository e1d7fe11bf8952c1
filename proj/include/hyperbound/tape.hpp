#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "hyperbound/rng.hpp"
#include "hyperbound/tensor.hpp"

namespace hyperbound {

/// Handle to a node recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

/// What a backward closure sees: the upstream gradient of its output and,
/// per input, the forward value and a gradient buffer to accumulate into.
/// `input_grads[k]` is empty when input k does not require a gradient.
struct BackwardArgs {
  std::span<const double> output_grad;
  const Tensor& output;
  std::span<const Tensor* const> inputs;
  std::span<const std::span<double>> input_grads;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

/// Append-only record of a forward computation. Node ids are assigned in
/// evaluation order, so the record is topologically sorted by construction
/// and backward() is a single reverse sweep.
class Tape {
 public:
  /// With `track_gradients == false` nothing needed for backward is kept;
  /// this is the inference path.
  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}

  bool tracks_gradients() const { return track_; }

  /// Leaf that never receives a gradient (data, labels).
  Var constant(Tensor value);
  /// Leaf that receives a gradient (trainable parameter).
  Var parameter(Tensor value);
  /// Interior node. `backward` must add d(loss)/d(input) for every input
  /// whose gradient buffer is non-empty.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  /// Gradient from the last backward() call; zeros for nodes the loss does
  /// not depend on.
  std::span<const double> grad(Var v) const;

  /// Reverse sweep from a scalar node. Gradients from earlier calls are
  /// discarded first.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  const Node& node(Var v) const;

  bool track_;
  std::deque<Node> nodes_;  // stable addresses: value() references survive record()
};

enum class Mode { train, eval };

namespace ops {

/// x: [N, in], weight: [out, in], bias: [out] -> [N, out].
Var affine(Tape& tape, Var x, Var weight, Var bias);
/// Valid padding, stride 1. x: [N, C, H, W], kernel: [O, C, k, k], bias: [O].
Var conv2d(Tape& tape, Var x, Var kernel, Var bias);
/// 2x2 window, stride 2; trailing odd rows/columns are dropped.
Var max_pool2(Tape& tape, Var x);
Var relu(Tape& tape, Var x);
Var tanh(Tape& tape, Var x);
/// [N, ...] -> [N, prod(...)].
Var flatten(Tape& tape, Var x);
/// Inverted dropout: zeroes each entry with probability `rate` and scales
/// survivors by 1/(1-rate). Identity in eval mode.
Var dropout(Tape& tape, Var x, double rate, Mode mode, RngStream& rng);

Var sum(Tape& tape, Var x);
/// Sum of squared entries.
Var sum_squares(Tape& tape, Var x);
Var scale(Tape& tape, Var x, double factor);
/// Elementwise a + b; shapes must match.
Var add(Tape& tape, Var a, Var b);

}  // namespace ops
}  // namespace hyperbound

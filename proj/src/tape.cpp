#include "hyperbound/tape.hpp"

#include <algorithm>
#include <string>

#include "hyperbound/errors.hpp"

namespace hyperbound {

Var Tape::constant(Tensor value) {
  value.check_finite("constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) {
  value.check_finite("parameter");
  Node n;
  n.value = std::move(value);
  n.requires_grad = track_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (track_) {
    n.inputs.reserve(inputs.size());
    for (Var in : inputs) {
      const Node& src = node(in);
      n.requires_grad = n.requires_grad || src.requires_grad;
      n.inputs.push_back(in.id);
    }
    if (n.requires_grad) {
      n.backward = std::move(backward);
    } else {
      n.inputs.clear();
    }
  } else {
    for (Var in : inputs) node(in);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

std::span<const double> Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) throw UsageError("no gradient recorded for node " + std::to_string(v.id));
  return n.grad;
}

void Tape::backward(Var loss) {
  if (!track_) throw UsageError("backward on a tape that does not track gradients");
  const Node& root = node(loss);
  if (root.value.size() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_string(root.value.shape()));
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad && i <= loss.id) {
      n.grad.assign(n.value.size(), 0.0);
    } else {
      n.grad.clear();
    }
  }
  if (!root.requires_grad) return;
  nodes_[loss.id].grad[0] = 1.0;

  std::vector<const Tensor*> in_values;
  std::vector<std::span<double>> in_grads;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t in : n.inputs) {
      Node& src = nodes_[in];
      in_values.push_back(&src.value);
      in_grads.push_back(src.requires_grad ? std::span<double>(src.grad) : std::span<double>());
    }
    n.backward(BackwardArgs{n.grad, n.value, in_values, in_grads});
  }
}

}  // namespace hyperbound

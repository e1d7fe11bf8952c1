#include "hyperbound/layers.hpp"

#include <algorithm>

#include "hyperbound/errors.hpp"

namespace hyperbound {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

[[noreturn]] void mismatch(const LayerSpec& spec, const Shape& input) {
  throw DimensionError(layer_name(spec) + ": input shape " + shape_string(input) + " does not fit");
}

}  // namespace

std::string layer_name(const LayerSpec& spec) {
  return std::visit(overloaded{
                        [](const AffineSpec&) { return std::string("affine"); },
                        [](const Conv2dSpec&) { return std::string("conv2d"); },
                        [](const MaxPool2Spec&) { return std::string("maxpool2"); },
                        [](const ReluSpec&) { return std::string("relu"); },
                        [](const TanhSpec&) { return std::string("tanh"); },
                        [](const FlattenSpec&) { return std::string("flatten"); },
                        [](const DropoutSpec&) { return std::string("dropout"); },
                    },
                    spec);
}

Shape layer_output_shape(const LayerSpec& spec, const Shape& input) {
  return std::visit(
      overloaded{
          [&](const AffineSpec& s) -> Shape {
            if (input.size() != 1 || input[0] != s.in_features) mismatch(spec, input);
            return {s.out_features};
          },
          [&](const Conv2dSpec& s) -> Shape {
            if (input.size() != 3 || input[0] != s.in_channels || input[1] < s.kernel || input[2] < s.kernel) {
              mismatch(spec, input);
            }
            return {s.out_channels, input[1] - s.kernel + 1, input[2] - s.kernel + 1};
          },
          [&](const MaxPool2Spec&) -> Shape {
            if (input.size() != 3 || input[1] < 2 || input[2] < 2) mismatch(spec, input);
            return {input[0], input[1] / 2, input[2] / 2};
          },
          [&](const FlattenSpec&) -> Shape { return {shape_size(input)}; },
          [&](const auto&) -> Shape { return input; },
      },
      spec);
}

bool layer_has_parameters(const LayerSpec& spec) {
  return std::holds_alternative<AffineSpec>(spec) || std::holds_alternative<Conv2dSpec>(spec);
}

Shape layer_weight_shape(const LayerSpec& spec) {
  if (const auto* a = std::get_if<AffineSpec>(&spec)) return {a->out_features, a->in_features};
  if (const auto* c = std::get_if<Conv2dSpec>(&spec)) return {c->out_channels, c->in_channels, c->kernel, c->kernel};
  return {};
}

Shape layer_bias_shape(const LayerSpec& spec) {
  if (const auto* a = std::get_if<AffineSpec>(&spec)) return {a->out_features};
  if (const auto* c = std::get_if<Conv2dSpec>(&spec)) return {c->out_channels};
  return {};
}

Var apply_layer(Tape& tape, const LayerSpec& spec, const Shape& input_shape, LayerVars params,
                Var input, Mode mode, RngStream& rng) {
  const Shape& batch_shape = tape.value(input).shape();
  if (batch_shape.size() != input_shape.size() + 1 ||
      !std::equal(input_shape.begin(), input_shape.end(), batch_shape.begin() + 1)) {
    throw DimensionError(layer_name(spec) + ": batch shape " + shape_string(batch_shape) +
                         " does not match declared input " + shape_string(input_shape));
  }
  layer_output_shape(spec, input_shape);
  if (layer_has_parameters(spec) && (!params.weight.valid() || !params.bias.valid())) {
    throw UsageError(layer_name(spec) + ": missing parameters");
  }
  return std::visit(overloaded{
                        [&](const AffineSpec&) { return ops::affine(tape, input, params.weight, params.bias); },
                        [&](const Conv2dSpec&) { return ops::conv2d(tape, input, params.weight, params.bias); },
                        [&](const MaxPool2Spec&) { return ops::max_pool2(tape, input); },
                        [&](const ReluSpec&) { return ops::relu(tape, input); },
                        [&](const TanhSpec&) { return ops::tanh(tape, input); },
                        [&](const FlattenSpec&) { return ops::flatten(tape, input); },
                        [&](const DropoutSpec& s) { return ops::dropout(tape, input, s.rate, mode, rng); },
                    },
                    spec);
}

}  // namespace hyperbound

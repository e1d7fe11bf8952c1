#pragma once

#include <cstddef>
#include <string>
#include <variant>

#include "hyperbound/rng.hpp"
#include "hyperbound/tape.hpp"
#include "hyperbound/tensor.hpp"

namespace hyperbound {

struct AffineSpec {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
};
struct Conv2dSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
};
struct MaxPool2Spec {};
struct ReluSpec {};
struct TanhSpec {};
struct FlattenSpec {};
struct DropoutSpec {
  double rate = 0.5;
};

using LayerSpec =
    std::variant<AffineSpec, Conv2dSpec, MaxPool2Spec, ReluSpec, TanhSpec, FlattenSpec, DropoutSpec>;

std::string layer_name(const LayerSpec& spec);

/// Per-example output shape, or DimensionError if `input` does not fit.
Shape layer_output_shape(const LayerSpec& spec, const Shape& input);

bool layer_has_parameters(const LayerSpec& spec);
Shape layer_weight_shape(const LayerSpec& spec);
Shape layer_bias_shape(const LayerSpec& spec);

/// Tape handles for a layer's weight and bias; both invalid for
/// parameter-free layers.
struct LayerVars {
  Var weight;
  Var bias;
};

/// Applies one layer to a batch [N, ...input_shape]. The batch dimension is
/// checked against `input_shape` before dispatch.
Var apply_layer(Tape& tape, const LayerSpec& spec, const Shape& input_shape, LayerVars params,
                Var input, Mode mode, RngStream& rng);

}  // namespace hyperbound

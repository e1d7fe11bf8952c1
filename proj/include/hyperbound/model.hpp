#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyperbound/layers.hpp"
#include "hyperbound/rng.hpp"
#include "hyperbound/tape.hpp"
#include "hyperbound/tensor.hpp"

namespace hyperbound {

enum class Activation { relu, tanh };

std::string to_string(Activation activation);
Activation parse_activation(const std::string& name);

/// A layer together with its parameters. `weight`/`bias` are empty tensors
/// for parameter-free layers.
struct Layer {
  LayerSpec spec;
  Shape input_shape;
  Tensor weight;
  Tensor bias;
};

/// The feature map z: R^n -> R^m, a sequence of layers whose final output
/// is a flat vector.
struct FeatureMap {
  Shape input_shape;
  std::vector<Layer> layers;

  /// Checks shapes compose and initializes parameters uniformly in
  /// +-1/sqrt(fan_in).
  static FeatureMap build(Shape input_shape, const std::vector<LayerSpec>& specs, RngStream& rng);

  Shape output_shape() const;
  std::size_t output_dim() const;
};

/// One-vs-rest linear classifiers on top of z: row c of `weight` is w_c and
/// `bias[c]` is b_c.
struct MarginHead {
  Tensor weight;  // [n_classes, m]
  Tensor bias;    // [n_classes]

  static MarginHead build(std::size_t n_classes, std::size_t dim, RngStream& rng);
  std::size_t n_classes() const { return weight.dim(0); }
  std::size_t dim() const { return weight.dim(1); }
  std::span<const double> class_weight(std::size_t c) const;
};

/// A trainable tensor with its optimizer treatment.
struct ParameterSlot {
  std::string name;
  Tensor* tensor;
  bool decay;  // false for biases
};

struct Model {
  FeatureMap feature_map;
  MarginHead head;

  std::size_t n_classes() const { return head.n_classes(); }
  /// Throws DimensionError unless the head dimension equals the feature
  /// dimension and every parameter buffer has its declared shape.
  void validate() const;
  /// Stable order: feature-map layers front to back (weight, bias), then head.
  std::vector<ParameterSlot> parameters();
  std::size_t parameter_count() const;
};

/// Tape leaves for every parameter, in Model::parameters() order.
struct ModelVars {
  std::vector<LayerVars> layers;
  Var head_weight;
  Var head_bias;
  std::vector<Var> flat;
};

ModelVars bind_parameters(Tape& tape, const Model& model);

struct ForwardPass {
  Var features;  // [N, m]
  Var scores;    // [N, n_classes]
};

/// Records z(x) and s_c = w_c . z(x) + b_c for a batch [N, ...input_shape].
ForwardPass forward(Tape& tape, const Model& model, const ModelVars& vars, Var batch, Mode mode,
                    RngStream& rng);

/// z(x) for a batch [N, ...input_shape] or a single example of exactly
/// input_shape; returns [N, m]. `rng` is required in train mode.
Tensor features(const Model& model, const Tensor& x, Mode mode = Mode::eval, RngStream* rng = nullptr);
/// Scores [N, n_classes].
Tensor scores(const Model& model, const Tensor& x, Mode mode = Mode::eval, RngStream* rng = nullptr);

struct Evaluation {
  Tensor features;  // [N, m]
  Tensor scores;    // [N, n_classes]
};
/// Eval-mode features and scores over a large batch, `chunk` rows at a time.
Evaluation evaluate(const Model& model, const Tensor& images, std::size_t chunk = 500);

struct Prediction {
  std::size_t label = 0;
  bool reject = false;  // every one-vs-rest classifier voted -1
};

/// Argmax with lowest-index tie-break.
Prediction predict(std::span<const double> scores);

struct LenetOptions {
  Activation activation = Activation::relu;
  double dropout = 0.0;  // 0 disables; otherwise after the 120- and 84-unit activations
  std::size_t n_classes = 10;
  Shape input_shape{1, 28, 28};
};
/// conv(1->6,5) act pool conv(6->16,5) act pool flatten affine(->120) act
/// affine(->84) act as z; affine(84->n_classes) as head.
Model make_lenet(const LenetOptions& options, RngStream& rng);

struct MlpOptions {
  Shape input_shape{2};  // flattened first when rank > 1
  std::vector<std::size_t> widths{16, 8};  // last entry is the feature dimension m
  Activation activation = Activation::relu;
  double dropout = 0.0;
  std::size_t n_classes = 2;
};
Model make_mlp(const MlpOptions& options, RngStream& rng);

/// JSON checkpoint, see docs in README ("Checkpoint format").
void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     const std::string& metadata_json = "{}");
Model load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_to_json(const Model& model, const std::string& metadata_json = "{}");
Model checkpoint_from_json(const std::string& text);

}  // namespace hyperbound

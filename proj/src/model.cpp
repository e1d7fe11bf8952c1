#include "hyperbound/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "hyperbound/errors.hpp"

namespace hyperbound {

using json = nlohmann::json;

std::string to_string(Activation activation) {
  return activation == Activation::relu ? "relu" : "tanh";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw UsageError("unknown activation '" + name + "'");
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, RngStream& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

std::size_t fan_in(const Shape& weight_shape) {
  std::size_t fan = 1;
  for (std::size_t i = 1; i < weight_shape.size(); ++i) fan *= weight_shape[i];
  return fan;
}

LayerSpec activation_layer(Activation a) {
  return a == Activation::relu ? LayerSpec{ReluSpec{}} : LayerSpec{TanhSpec{}};
}

}  // namespace

FeatureMap FeatureMap::build(Shape input_shape, const std::vector<LayerSpec>& specs, RngStream& rng) {
  FeatureMap map;
  map.input_shape = input_shape;
  Shape shape = std::move(input_shape);
  for (const LayerSpec& spec : specs) {
    Layer layer{spec, shape, {}, {}};
    if (layer_has_parameters(spec)) {
      const Shape ws = layer_weight_shape(spec);
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in(ws)));
      layer.weight = uniform_tensor(ws, bound, rng);
      layer.bias = uniform_tensor(layer_bias_shape(spec), bound, rng);
    }
    shape = layer_output_shape(spec, shape);
    map.layers.push_back(std::move(layer));
  }
  if (shape.size() != 1) {
    throw DimensionError("feature map must end in a flat vector, got " + shape_string(shape));
  }
  return map;
}

Shape FeatureMap::output_shape() const {
  Shape shape = input_shape;
  for (const Layer& layer : layers) shape = layer_output_shape(layer.spec, shape);
  return shape;
}

std::size_t FeatureMap::output_dim() const {
  const Shape shape = output_shape();
  if (shape.size() != 1) throw DimensionError("feature map output is not a vector: " + shape_string(shape));
  return shape[0];
}

MarginHead MarginHead::build(std::size_t n_classes, std::size_t dim, RngStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  MarginHead head;
  head.weight = uniform_tensor({n_classes, dim}, bound, rng);
  head.bias = uniform_tensor({n_classes}, bound, rng);
  return head;
}

std::span<const double> MarginHead::class_weight(std::size_t c) const {
  if (c >= n_classes()) throw UsageError("class index out of range");
  return weight.values().subspan(c * dim(), dim());
}

void Model::validate() const {
  Shape shape = feature_map.input_shape;
  for (const Layer& layer : feature_map.layers) {
    if (layer.input_shape != shape) {
      throw DimensionError(layer_name(layer.spec) + ": recorded input shape " + shape_string(layer.input_shape) +
                           " does not follow from previous layer " + shape_string(shape));
    }
    if (layer_has_parameters(layer.spec)) {
      if (layer.weight.shape() != layer_weight_shape(layer.spec) ||
          layer.bias.shape() != layer_bias_shape(layer.spec)) {
        throw DimensionError(layer_name(layer.spec) + ": parameter buffers do not match layer spec");
      }
    }
    shape = layer_output_shape(layer.spec, shape);
  }
  if (shape.size() != 1) throw DimensionError("feature map output is not a vector");
  if (head.weight.rank() != 2 || head.bias.rank() != 1 || head.weight.dim(0) != head.bias.dim(0)) {
    throw DimensionError("margin head must be weight [C, m] and bias [C]");
  }
  if (head.dim() != shape[0]) {
    throw DimensionError("margin head dimension " + std::to_string(head.dim()) + " != feature dimension " +
                         std::to_string(shape[0]));
  }
}

std::vector<ParameterSlot> Model::parameters() {
  std::vector<ParameterSlot> out;
  for (std::size_t i = 0; i < feature_map.layers.size(); ++i) {
    Layer& layer = feature_map.layers[i];
    if (!layer_has_parameters(layer.spec)) continue;
    const std::string prefix = "z." + std::to_string(i) + "." + layer_name(layer.spec);
    out.push_back({prefix + ".weight", &layer.weight, true});
    out.push_back({prefix + ".bias", &layer.bias, false});
  }
  out.push_back({"head.weight", &head.weight, true});
  out.push_back({"head.bias", &head.bias, false});
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = head.weight.size() + head.bias.size();
  for (const Layer& layer : feature_map.layers) n += layer.weight.size() + layer.bias.size();
  return n;
}

ModelVars bind_parameters(Tape& tape, const Model& model) {
  ModelVars vars;
  for (const Layer& layer : model.feature_map.layers) {
    LayerVars lv;
    if (layer_has_parameters(layer.spec)) {
      lv.weight = tape.parameter(layer.weight);
      lv.bias = tape.parameter(layer.bias);
      vars.flat.push_back(lv.weight);
      vars.flat.push_back(lv.bias);
    }
    vars.layers.push_back(lv);
  }
  vars.head_weight = tape.parameter(model.head.weight);
  vars.head_bias = tape.parameter(model.head.bias);
  vars.flat.push_back(vars.head_weight);
  vars.flat.push_back(vars.head_bias);
  return vars;
}

ForwardPass forward(Tape& tape, const Model& model, const ModelVars& vars, Var batch, Mode mode,
                    RngStream& rng) {
  const auto& layers = model.feature_map.layers;
  if (vars.layers.size() != layers.size()) throw UsageError("parameter bindings do not match model");
  Var h = batch;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = apply_layer(tape, layers[i].spec, layers[i].input_shape, vars.layers[i], h, mode, rng);
  }
  if (tape.value(h).rank() != 2) throw DimensionError("feature map output must be [N, m]");
  const Var s = ops::affine(tape, h, vars.head_weight, vars.head_bias);
  return {h, s};
}

namespace {

Tensor as_batch(const Model& model, const Tensor& x) {
  const Shape& in = model.feature_map.input_shape;
  if (x.shape() == in) {
    Shape batched{1};
    batched.insert(batched.end(), in.begin(), in.end());
    return x.reshaped(std::move(batched));
  }
  return x;
}

ForwardPass run(Tape& tape, const Model& model, const Tensor& x, Mode mode, RngStream* rng) {
  if (mode == Mode::train && rng == nullptr) throw UsageError("train-mode evaluation needs an rng stream");
  RngStream unused(0);
  const ModelVars vars = bind_parameters(tape, model);
  const Var input = tape.constant(as_batch(model, x));
  return forward(tape, model, vars, input, mode, rng ? *rng : unused);
}

}  // namespace

Tensor features(const Model& model, const Tensor& x, Mode mode, RngStream* rng) {
  Tape tape(false);
  const ForwardPass pass = run(tape, model, x, mode, rng);
  return tape.value(pass.features);
}

Tensor scores(const Model& model, const Tensor& x, Mode mode, RngStream* rng) {
  Tape tape(false);
  const ForwardPass pass = run(tape, model, x, mode, rng);
  return tape.value(pass.scores);
}

Evaluation evaluate(const Model& model, const Tensor& images, std::size_t chunk) {
  const std::size_t n = images.dim(0);
  const std::size_t m = model.feature_map.output_dim();
  const std::size_t c = model.n_classes();
  Evaluation out{Tensor({n, m}), Tensor({n, c})};
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    Tape tape(false);
    const ForwardPass pass = run(tape, model, images.slice_rows(begin, end), Mode::eval, nullptr);
    const Tensor& f = tape.value(pass.features);
    const Tensor& s = tape.value(pass.scores);
    std::copy(f.values().begin(), f.values().end(), out.features.values().begin() + begin * m);
    std::copy(s.values().begin(), s.values().end(), out.scores.values().begin() + begin * c);
  }
  return out;
}

Prediction predict(std::span<const double> scores) {
  if (scores.empty()) throw UsageError("predict: empty score vector");
  Prediction p;
  bool all_negative = true;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (scores[c] > scores[p.label]) p.label = c;
    if (!(scores[c] < 0.0)) all_negative = false;
  }
  p.reject = all_negative;
  return p;
}

Model make_lenet(const LenetOptions& options, RngStream& rng) {
  if (options.input_shape.size() != 3) throw DimensionError("LeNet input must be [C, H, W]");
  const LayerSpec act = activation_layer(options.activation);
  std::vector<LayerSpec> specs{
      Conv2dSpec{options.input_shape[0], 6, 5}, act, MaxPool2Spec{},
      Conv2dSpec{6, 16, 5}, act, MaxPool2Spec{}, FlattenSpec{}};
  Shape shape = options.input_shape;
  for (const LayerSpec& s : specs) shape = layer_output_shape(s, shape);
  specs.push_back(AffineSpec{shape[0], 120});
  specs.push_back(act);
  if (options.dropout > 0.0) specs.push_back(DropoutSpec{options.dropout});
  specs.push_back(AffineSpec{120, 84});
  specs.push_back(act);
  if (options.dropout > 0.0) specs.push_back(DropoutSpec{options.dropout});

  Model model;
  model.feature_map = FeatureMap::build(options.input_shape, specs, rng);
  model.head = MarginHead::build(options.n_classes, 84, rng);
  model.validate();
  return model;
}

Model make_mlp(const MlpOptions& options, RngStream& rng) {
  if (options.widths.empty()) throw UsageError("MLP needs at least one layer width");
  const LayerSpec act = activation_layer(options.activation);
  std::vector<LayerSpec> specs;
  if (options.input_shape.size() > 1) specs.push_back(FlattenSpec{});
  std::size_t in = shape_size(options.input_shape);
  for (std::size_t width : options.widths) {
    specs.push_back(AffineSpec{in, width});
    specs.push_back(act);
    if (options.dropout > 0.0) specs.push_back(DropoutSpec{options.dropout});
    in = width;
  }
  Model model;
  model.feature_map = FeatureMap::build(options.input_shape, specs, rng);
  model.head = MarginHead::build(options.n_classes, in, rng);
  model.validate();
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointFormat = "hyperbound-checkpoint";
constexpr int kCheckpointVersion = 1;

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
}

json spec_to_json(const LayerSpec& spec) {
  json j{{"kind", layer_name(spec)}};
  if (const auto* a = std::get_if<AffineSpec>(&spec)) {
    j["in_features"] = a->in_features;
    j["out_features"] = a->out_features;
  } else if (const auto* c = std::get_if<Conv2dSpec>(&spec)) {
    j["in_channels"] = c->in_channels;
    j["out_channels"] = c->out_channels;
    j["kernel"] = c->kernel;
  } else if (const auto* d = std::get_if<DropoutSpec>(&spec)) {
    j["rate"] = d->rate;
  }
  return j;
}

LayerSpec spec_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "affine") return AffineSpec{j.at("in_features").get<std::size_t>(), j.at("out_features").get<std::size_t>()};
  if (kind == "conv2d") {
    return Conv2dSpec{j.at("in_channels").get<std::size_t>(), j.at("out_channels").get<std::size_t>(),
                      j.at("kernel").get<std::size_t>()};
  }
  if (kind == "maxpool2") return MaxPool2Spec{};
  if (kind == "relu") return ReluSpec{};
  if (kind == "tanh") return TanhSpec{};
  if (kind == "flatten") return FlattenSpec{};
  if (kind == "dropout") return DropoutSpec{j.at("rate").get<double>()};
  throw DataError("checkpoint: unknown layer kind '" + kind + "'");
}

}  // namespace

std::string checkpoint_to_json(const Model& model, const std::string& metadata_json) {
  json layers = json::array();
  for (const Layer& layer : model.feature_map.layers) {
    json l = spec_to_json(layer.spec);
    if (layer_has_parameters(layer.spec)) {
      l["weight"] = tensor_to_json(layer.weight);
      l["bias"] = tensor_to_json(layer.bias);
    }
    layers.push_back(std::move(l));
  }
  json doc{{"format", kCheckpointFormat},
           {"version", kCheckpointVersion},
           {"input_shape", model.feature_map.input_shape},
           {"n_classes", model.n_classes()},
           {"feature_dim", model.head.dim()},
           {"layers", std::move(layers)},
           {"head", {{"weight", tensor_to_json(model.head.weight)}, {"bias", tensor_to_json(model.head.bias)}}},
           {"metadata", json::parse(metadata_json)}};
  return doc.dump();
}

Model checkpoint_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    if (doc.at("format").get<std::string>() != kCheckpointFormat) throw DataError("checkpoint: wrong format tag");
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw DataError("checkpoint: unsupported version " + std::to_string(doc.at("version").get<int>()));
    }
    Model model;
    model.feature_map.input_shape = doc.at("input_shape").get<Shape>();
    Shape shape = model.feature_map.input_shape;
    for (const json& l : doc.at("layers")) {
      Layer layer{spec_from_json(l), shape, {}, {}};
      if (layer_has_parameters(layer.spec)) {
        layer.weight = tensor_from_json(l.at("weight"));
        layer.bias = tensor_from_json(l.at("bias"));
      }
      shape = layer_output_shape(layer.spec, shape);
      model.feature_map.layers.push_back(std::move(layer));
    }
    model.head.weight = tensor_from_json(doc.at("head").at("weight"));
    model.head.bias = tensor_from_json(doc.at("head").at("bias"));
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path, const std::string& metadata_json) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(model, metadata_json);
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_json(buffer.str());
}

}  // namespace hyperbound

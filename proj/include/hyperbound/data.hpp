#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyperbound/rng.hpp"
#include "hyperbound/tensor.hpp"

namespace hyperbound {

enum class Split { train, test };

struct MnistConstants {
  static constexpr double mean = 0.1307;
  static constexpr double std = 0.3081;
};

/// Images [N, C, H, W] with class labels. `mean`/`std` record the per-channel
/// normalization already applied (0 and 1 for raw [0, 1] pixels).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::vector<double> mean;
  std::vector<double> std;
  Split split = Split::train;
  std::size_t n_classes = 10;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  std::size_t image_size() const { return images.dim(1) * images.dim(2) * images.dim(3); }
  std::span<const double> image(std::size_t i) const;

  void validate() const;
  /// Rows in the given order.
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Reads an IDX3 image file (magic 2051) and IDX1 label file (magic 2049).
/// Pixels are mapped to [0, 1] by /255. Gzip-compressed files are accepted
/// transparently.
Dataset load_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
                 Split split = Split::train, std::size_t n_classes = 10);

/// Writes single-channel images quantized to 8 bits (round(p * 255), clamped)
/// and labels. Pixels must be un-normalized.
void write_idx(const Dataset& dataset, const std::filesystem::path& image_path,
               const std::filesystem::path& label_path);

/// The four standard MNIST files in `dir`, with or without a .gz suffix.
struct MnistFiles {
  std::filesystem::path train_images, train_labels, test_images, test_labels;
};
MnistFiles locate_mnist(const std::filesystem::path& dir);

/// pixel <- (pixel - mean[c]) / std[c]. A single entry applies to all
/// channels.
Dataset normalize(Dataset dataset, std::span<const double> mean, std::span<const double> std);
Dataset normalize(Dataset dataset, double mean, double std);

/// Stratified subsample keeping round(pct% of each class), drawn
/// deterministically from `seed`, returned in original order. pct == 100
/// returns the full dataset unchanged.
Dataset subsample_fraction(const Dataset& dataset, int pct, std::uint64_t seed);

/// Geometric and photometric augmentation parameters. Translations are in
/// pixels along the column (x) and row (y) axes.
struct AffineParams {
  double rotation_deg = 0.0;
  double translate_x = 0.0;
  double translate_y = 0.0;
  double scale = 1.0;
  double brightness = 0.0;
  double contrast = 1.0;
};

struct AugmentRanges {
  double max_rotation_deg = 20.0;
  double max_translate = 0.1;  // fraction of width/height
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_brightness = 0.2;
  double max_contrast_change = 0.2;  // contrast factor in [1 - c, 1 + c]
};

AffineParams sample_affine_params(std::size_t height, std::size_t width, RngStream& rng,
                                  const AugmentRanges& ranges = {});

/// Rotation/scale about the image center plus translation, bilinear
/// resampling with zero fill, then
/// pixel <- clamp(contrast * (pixel - 0.5) + 0.5 + brightness, 0, 1).
/// `image` is [C, H, W] in the [0, 1] pixel domain.
void apply_affine(std::span<const double> image, std::size_t channels, std::size_t height, std::size_t width,
                  const AffineParams& params, std::span<double> out);

/// Samples parameters and applies them to a [C, H, W] tensor.
Tensor random_affine(const Tensor& image, RngStream& rng);

/// Labelled points in R^n with +-1 labels.
struct LabeledVectors {
  std::vector<std::vector<double>> points;
  std::vector<int> labels;
  std::optional<double> margin;  // declared lower bound rho0 on y (w* . x)
  std::optional<double> radius;  // declared bound D on |x|
  std::vector<double> direction;  // generating unit vector w*, when known

  std::size_t size() const { return points.size(); }
  std::size_t dim() const { return points.empty() ? 0 : points.front().size(); }
  void validate() const;
};

/// Points uniform in the open radius-D ball, kept when |w* . x| >= rho0 and
/// labelled sign(w* . x), for a random unit w*. Both classes are present.
/// Separable through the origin with margin >= rho0.
LabeledVectors synth_separable(std::size_t n_points, std::size_t dim, double rho0, double radius,
                               std::uint64_t seed);

void save_vectors(const LabeledVectors& data, const std::filesystem::path& path);
LabeledVectors load_vectors(const std::filesystem::path& path);

}  // namespace hyperbound

#include "hyperbound/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>

#include "hyperbound/errors.hpp"
#include "json.hpp"

namespace hyperbound {

namespace fs = std::filesystem;

std::span<const double> Dataset::image(std::size_t i) const {
  if (i >= size()) throw UsageError("image index out of range");
  return images.values().subspan(i * image_size(), image_size());
}

void Dataset::validate() const {
  if (images.rank() != 4) throw DimensionError("dataset images must be [N, C, H, W]");
  if (images.dim(0) != labels.size()) {
    throw DimensionError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                         std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= n_classes) throw DataError("label out of range");
  }
  if (mean.size() != channels() || std.size() != channels()) {
    throw DimensionError("normalization metadata must have one entry per channel");
  }
  images.check_finite("dataset images");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw UsageError("empty subset");
  Dataset out;
  Shape shape = images.shape();
  shape[0] = indices.size();
  out.images = Tensor(shape);
  const std::size_t row = image_size();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto src = image(indices[k]);
    std::copy(src.begin(), src.end(), out.images.values().begin() + static_cast<std::ptrdiff_t>(k * row));
    out.labels.push_back(labels[indices[k]]);
  }
  out.mean = mean;
  out.std = std;
  out.split = split;
  out.n_classes = n_classes;
  return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_all(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("no such file: " + path.string());
  gzFile file = gzopen(path.string().c_str(), "rb");
  if (file == nullptr) throw DataError("cannot open " + path.string());
  std::unique_ptr<gzFile_s, int (*)(gzFile)> guard(file, gzclose);
  std::vector<unsigned char> bytes;
  unsigned char buffer[1 << 16];
  for (;;) {
    const int n = gzread(file, buffer, sizeof buffer);
    if (n < 0) throw DataError("read error in " + path.string());
    if (n == 0) break;
    bytes.insert(bytes.end(), buffer, buffer + n);
  }
  return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const fs::path& path) {
  if (offset + 4 > bytes.size()) throw DataError("truncated header in " + path.string());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

Dataset load_idx(const fs::path& image_path, const fs::path& label_path, Split split, std::size_t n_classes) {
  const auto img = read_all(image_path);
  const auto lab = read_all(label_path);

  if (read_be32(img, 0, image_path) != kImageMagic) {
    throw DataError("bad magic in image file " + image_path.string() + " (expected 2051)");
  }
  if (read_be32(lab, 0, label_path) != kLabelMagic) {
    throw DataError("bad magic in label file " + label_path.string() + " (expected 2049)");
  }
  const std::size_t n = read_be32(img, 4, image_path);
  const std::size_t rows = read_be32(img, 8, image_path);
  const std::size_t cols = read_be32(img, 12, image_path);
  const std::size_t n_labels = read_be32(lab, 4, label_path);
  if (n != n_labels) {
    throw DataError("count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) + " labels");
  }
  if (n == 0 || rows == 0 || cols == 0) throw DataError("empty IDX file " + image_path.string());
  if (img.size() < 16 + n * rows * cols) throw DataError("truncated image file " + image_path.string());
  if (lab.size() < 8 + n) throw DataError("truncated label file " + label_path.string());

  Dataset d;
  d.images = Tensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) d.images[i] = img[16 + i] / 255.0;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = lab[8 + i];
  d.mean = {0.0};
  d.std = {1.0};
  d.split = split;
  d.n_classes = n_classes;
  d.validate();
  return d;
}

void write_idx(const Dataset& dataset, const fs::path& image_path, const fs::path& label_path) {
  dataset.validate();
  if (dataset.channels() != 1) throw DimensionError("IDX export supports single-channel images only");
  std::ofstream img(image_path, std::ios::binary);
  std::ofstream lab(label_path, std::ios::binary);
  if (!img || !lab) throw DataError("cannot write IDX files");
  put_be32(img, kImageMagic);
  put_be32(img, static_cast<std::uint32_t>(dataset.size()));
  put_be32(img, static_cast<std::uint32_t>(dataset.images.dim(2)));
  put_be32(img, static_cast<std::uint32_t>(dataset.images.dim(3)));
  for (double p : dataset.images.values()) {
    const double q = std::clamp(std::round(p * 255.0), 0.0, 255.0);
    img.put(static_cast<char>(static_cast<unsigned char>(q)));
  }
  put_be32(lab, kLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(dataset.size()));
  for (int l : dataset.labels) lab.put(static_cast<char>(static_cast<unsigned char>(l)));
  if (!img || !lab) throw DataError("failed writing IDX files");
}

MnistFiles locate_mnist(const fs::path& dir) {
  auto pick = [&](const std::string& stem) {
    for (const fs::path& candidate : {dir / stem, dir / (stem + ".gz")}) {
      if (fs::exists(candidate)) return candidate;
    }
    throw DataError("MNIST file " + stem + " not found in " + dir.string());
  };
  return {pick("train-images-idx3-ubyte"), pick("train-labels-idx1-ubyte"), pick("t10k-images-idx3-ubyte"),
          pick("t10k-labels-idx1-ubyte")};
}

// ---------------------------------------------------------------------------
// Normalization and subsampling

Dataset normalize(Dataset dataset, std::span<const double> mean, std::span<const double> std) {
  dataset.validate();
  const std::size_t channels = dataset.channels();
  auto pick = [&](std::span<const double> v, std::size_t c) {
    if (v.size() == 1) return v[0];
    if (v.size() != channels) throw DimensionError("normalization needs one value per channel");
    return v[c];
  };
  const std::size_t plane = dataset.images.dim(2) * dataset.images.dim(3);
  for (std::size_t c = 0; c < channels; ++c) {
    if (!(pick(std, c) > 0.0)) throw UsageError("normalization std must be positive");
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double m = pick(mean, c), s = pick(std, c);
      double* p = dataset.images.data() + (i * channels + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - m) / s;
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    dataset.mean[c] += dataset.std[c] * pick(mean, c);
    dataset.std[c] *= pick(std, c);
  }
  dataset.images.check_finite("normalized images");
  return dataset;
}

Dataset normalize(Dataset dataset, double mean, double std) {
  const double m[1] = {mean};
  const double s[1] = {std};
  return normalize(std::move(dataset), m, s);
}

Dataset subsample_fraction(const Dataset& dataset, int pct, std::uint64_t seed) {
  if (pct < 1 || pct > 100) throw UsageError("fraction must be an integer percentage in [1, 100]");
  if (dataset.size() == 0) throw UsageError("cannot subsample an empty dataset");
  if (pct == 100) return dataset;

  std::vector<std::vector<std::size_t>> by_class(dataset.n_classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);

  RngStream rng = RngStream::derive(seed, {0x5ab5a3b1eULL, static_cast<std::uint64_t>(pct)});
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    const std::size_t keep = (members.size() * static_cast<std::size_t>(pct) + 50) / 100;
    if (keep == 0) {
      throw DataError("cannot stratify: class " + std::to_string(c) + " has no examples at " +
                      std::to_string(pct) + "%");
    }
    rng.shuffle(std::span<std::size_t>(members));
    chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  std::sort(chosen.begin(), chosen.end());
  return dataset.subset(chosen);
}

// ---------------------------------------------------------------------------
// Augmentation

AffineParams sample_affine_params(std::size_t height, std::size_t width, RngStream& rng,
                                  const AugmentRanges& r) {
  AffineParams p;
  p.rotation_deg = rng.uniform(-r.max_rotation_deg, r.max_rotation_deg);
  p.translate_x = rng.uniform(-r.max_translate, r.max_translate) * static_cast<double>(width);
  p.translate_y = rng.uniform(-r.max_translate, r.max_translate) * static_cast<double>(height);
  p.scale = rng.uniform(r.min_scale, r.max_scale);
  p.brightness = rng.uniform(-r.max_brightness, r.max_brightness);
  p.contrast = rng.uniform(1.0 - r.max_contrast_change, 1.0 + r.max_contrast_change);
  return p;
}

void apply_affine(std::span<const double> image, std::size_t channels, std::size_t height, std::size_t width,
                  const AffineParams& params, std::span<double> out) {
  const std::size_t plane = height * width;
  if (image.size() != channels * plane || out.size() != image.size()) {
    throw DimensionError("apply_affine: buffer sizes do not match [C, H, W]");
  }
  if (!(params.scale > 0.0)) throw UsageError("apply_affine: scale must be positive");
  const double theta = params.rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const auto h = static_cast<std::ptrdiff_t>(height), w = static_cast<std::ptrdiff_t>(width);

  // Applied as c * p + (0.5 - 0.5 c + b) so that identity parameters are exact.
  const double gain = params.contrast;
  const double offset = 0.5 - 0.5 * params.contrast + params.brightness;

  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = image.data() + c * plane;
    double* dst = out.data() + c * plane;
    auto at = [&](std::ptrdiff_t r, std::ptrdiff_t col) {
      return (r < 0 || r >= h || col < 0 || col >= w) ? 0.0 : src[r * w + col];
    };
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t col = 0; col < width; ++col) {
        // Inverse map: output pixel -> source coordinates.
        const double dx = static_cast<double>(col) - cx - params.translate_x;
        const double dy = static_cast<double>(r) - cy - params.translate_y;
        const double sx = (cos_t * dx + sin_t * dy) / params.scale + cx;
        const double sy = (-sin_t * dx + cos_t * dy) / params.scale + cy;
        const double fx0 = std::floor(sx), fy0 = std::floor(sy);
        const double fx = sx - fx0, fy = sy - fy0;
        const auto x0 = static_cast<std::ptrdiff_t>(fx0), y0 = static_cast<std::ptrdiff_t>(fy0);
        double v = at(y0, x0) * (1.0 - fx) * (1.0 - fy);
        if (fx != 0.0) v += at(y0, x0 + 1) * fx * (1.0 - fy);
        if (fy != 0.0) v += at(y0 + 1, x0) * (1.0 - fx) * fy;
        if (fx != 0.0 && fy != 0.0) v += at(y0 + 1, x0 + 1) * fx * fy;
        dst[r * width + col] = std::clamp(gain * v + offset, 0.0, 1.0);
      }
    }
  }
}

Tensor random_affine(const Tensor& image, RngStream& rng) {
  if (image.rank() != 3) throw DimensionError("random_affine expects a [C, H, W] image");
  const AffineParams p = sample_affine_params(image.dim(1), image.dim(2), rng);
  Tensor out(image.shape());
  apply_affine(image.values(), image.dim(0), image.dim(1), image.dim(2), p, out.values());
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic separable data

void LabeledVectors::validate() const {
  if (points.size() != labels.size()) throw DimensionError("points and labels differ in count");
  if (points.empty()) throw UsageError("empty point set");
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != dim()) throw DimensionError("points differ in dimension");
    if (labels[i] == 1) {
      pos = true;
    } else if (labels[i] == -1) {
      neg = true;
    } else {
      throw UsageError("labels must be +1 or -1");
    }
    if (radius) {
      double n2 = 0.0;
      for (double v : points[i]) n2 += v * v;
      if (std::sqrt(n2) > *radius) throw DataError("point exceeds declared radius");
    }
  }
  if (!pos || !neg) throw DataError("both classes must be present");
}

LabeledVectors synth_separable(std::size_t n_points, std::size_t dim, double rho0, double radius,
                               std::uint64_t seed) {
  if (!(rho0 > 0.0 && rho0 < radius)) throw UsageError("synth_separable requires 0 < rho0 < D");
  if (n_points < 2 || dim < 1) throw UsageError("synth_separable needs at least 2 points and dim >= 1");
  RngStream rng(seed);

  LabeledVectors out;
  out.direction.resize(dim);
  double norm = 0.0;
  while (norm < 1e-12) {
    norm = 0.0;
    for (double& v : out.direction) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
  }
  for (double& v : out.direction) v /= norm;

  const std::size_t max_draws = 100000 * n_points;
  std::size_t draws = 0;
  std::vector<double> x(dim);
  while (out.points.size() < n_points) {
    if (++draws > max_draws) throw DataError("synth_separable: sampling failed, margin too large for radius");
    // Uniform in the ball: normal direction, radius D * u^(1/dim).
    double n2 = 0.0;
    for (double& v : x) {
      v = rng.normal();
      n2 += v * v;
    }
    if (n2 < 1e-24) continue;
    const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(dim));
    const double k = r / std::sqrt(n2);
    double proj = 0.0, len2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      x[i] *= k;
      proj += x[i] * out.direction[i];
      len2 += x[i] * x[i];
    }
    if (std::sqrt(len2) >= radius || std::abs(proj) < rho0) continue;
    out.points.push_back(x);
    out.labels.push_back(proj > 0.0 ? 1 : -1);
  }
  // Mirroring a point keeps its norm and margin and flips its label.
  const bool has_pos = std::count(out.labels.begin(), out.labels.end(), 1) > 0;
  const bool has_neg = std::count(out.labels.begin(), out.labels.end(), -1) > 0;
  if (!has_pos || !has_neg) {
    for (double& v : out.points.back()) v = -v;
    out.labels.back() = -out.labels.back();
  }
  out.margin = rho0;
  out.radius = radius;
  out.validate();
  return out;
}

void save_vectors(const LabeledVectors& data, const fs::path& path) {
  data.validate();
  nlohmann::json doc{{"format", "hyperbound-vectors"}, {"version", 1}, {"dim", data.dim()},
                     {"points", data.points}, {"labels", data.labels}};
  if (data.margin) doc["margin"] = *data.margin;
  if (data.radius) doc["radius"] = *data.radius;
  if (!data.direction.empty()) doc["direction"] = data.direction;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

LabeledVectors load_vectors(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    const auto doc = nlohmann::json::parse(in);
    if (doc.at("format").get<std::string>() != "hyperbound-vectors") throw DataError("not a vector set file");
    LabeledVectors data;
    data.points = doc.at("points").get<std::vector<std::vector<double>>>();
    data.labels = doc.at("labels").get<std::vector<int>>();
    if (doc.contains("margin")) data.margin = doc["margin"].get<double>();
    if (doc.contains("radius")) data.radius = doc["radius"].get<double>();
    if (doc.contains("direction")) data.direction = doc["direction"].get<std::vector<double>>();
    data.validate();
    return data;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("vector set: ") + e.what());
  }
}

}  // namespace hyperbound

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "hyperbound/errors.hpp"
#include "hyperbound/tape.hpp"

namespace hyperbound::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got " + shape_string(t.shape()));
  }
}

Tensor finite(Tensor t, const char* op) {
  t.check_finite(op);
  return t;
}

// Column matrix for one image: rows index (c, ki, kj), columns index output
// pixels (oi, oj).
void im2col(const double* image, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t k, double* cols) {
  const std::size_t oh = height - k + 1;
  const std::size_t ow = width - k + 1;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = cols + ((c * k + ki) * k + kj) * oh * ow;
        const double* src = image + c * height * width + ki * width + kj;
        for (std::size_t oi = 0; oi < oh; ++oi) {
          std::copy_n(src + oi * width, ow, row + oi * ow);
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t k, double* image) {
  const std::size_t oh = height - k + 1;
  const std::size_t ow = width - k + 1;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = cols + ((c * k + ki) * k + kj) * oh * ow;
        double* dst = image + c * height * width + ki * width + kj;
        for (std::size_t oi = 0; oi < oh; ++oi) {
          for (std::size_t oj = 0; oj < ow; ++oj) dst[oi * width + oj] += row[oi * ow + oj];
        }
      }
    }
  }
}

}  // namespace

Var affine(Tape& tape, Var x, Var weight, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weight);
  const Tensor& bv = tape.value(bias);
  require_rank(xv, 2, "affine", "input");
  require_rank(wv, 2, "affine", "weight");
  require_rank(bv, 1, "affine", "bias");
  const std::size_t n = xv.dim(0);
  const std::size_t in = xv.dim(1);
  const std::size_t out = wv.dim(0);
  if (wv.dim(1) != in || bv.dim(0) != out) {
    throw DimensionError("affine: input " + shape_string(xv.shape()) + " incompatible with weight " +
                         shape_string(wv.shape()) + " and bias " + shape_string(bv.shape()));
  }
  Tensor result({n, out});
  MatrixMap y(result.data(), n, out);
  y.noalias() = ConstMatrixMap(xv.data(), n, in) * ConstMatrixMap(wv.data(), out, in).transpose();
  y.rowwise() += ConstVectorMap(bv.data(), out).transpose();

  return tape.record(finite(std::move(result), "affine"), {x, weight, bias}, [n, in, out](const BackwardArgs& a) {
    ConstMatrixMap dy(a.output_grad.data(), n, out);
    if (!a.input_grads[0].empty()) {
      MatrixMap(a.input_grads[0].data(), n, in).noalias() +=
          dy * ConstMatrixMap(a.inputs[1]->data(), out, in);
    }
    if (!a.input_grads[1].empty()) {
      MatrixMap(a.input_grads[1].data(), out, in).noalias() +=
          dy.transpose() * ConstMatrixMap(a.inputs[0]->data(), n, in);
    }
    if (!a.input_grads[2].empty()) {
      VectorMap(a.input_grads[2].data(), out) += dy.colwise().sum().transpose();
    }
  });
}

Var conv2d(Tape& tape, Var x, Var kernel, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& kv = tape.value(kernel);
  const Tensor& bv = tape.value(bias);
  require_rank(xv, 4, "conv2d", "input");
  require_rank(kv, 4, "conv2d", "kernel");
  require_rank(bv, 1, "conv2d", "bias");
  const std::size_t n = xv.dim(0), channels = xv.dim(1), height = xv.dim(2), width = xv.dim(3);
  const std::size_t out_ch = kv.dim(0), k = kv.dim(2);
  if (kv.dim(1) != channels || kv.dim(3) != k || bv.dim(0) != out_ch || k > height || k > width) {
    throw DimensionError("conv2d: input " + shape_string(xv.shape()) + " incompatible with kernel " +
                         shape_string(kv.shape()) + " and bias " + shape_string(bv.shape()));
  }
  const std::size_t oh = height - k + 1, ow = width - k + 1;
  const std::size_t patch = channels * k * k;
  const std::size_t pixels = oh * ow;

  auto cols = std::make_shared<std::vector<double>>(n * patch * pixels);
  Tensor result({n, out_ch, oh, ow});
  ConstMatrixMap kmat(kv.data(), out_ch, patch);
  for (std::size_t s = 0; s < n; ++s) {
    double* c = cols->data() + s * patch * pixels;
    im2col(xv.data() + s * channels * height * width, channels, height, width, k, c);
    MatrixMap y(result.data() + s * out_ch * pixels, out_ch, pixels);
    y.noalias() = kmat * ConstMatrixMap(c, patch, pixels);
    y.colwise() += ConstVectorMap(bv.data(), out_ch);
  }
  if (!tape.tracks_gradients()) cols.reset();

  return tape.record(
      finite(std::move(result), "conv2d"), {x, kernel, bias},
      [=](const BackwardArgs& a) {
        ConstMatrixMap kmat_b(a.inputs[1]->data(), out_ch, patch);
        RowMatrix dcols;
        for (std::size_t s = 0; s < n; ++s) {
          ConstMatrixMap dy(a.output_grad.data() + s * out_ch * pixels, out_ch, pixels);
          ConstMatrixMap c(cols->data() + s * patch * pixels, patch, pixels);
          if (!a.input_grads[1].empty()) {
            MatrixMap(a.input_grads[1].data(), out_ch, patch).noalias() += dy * c.transpose();
          }
          if (!a.input_grads[2].empty()) {
            VectorMap(a.input_grads[2].data(), out_ch) += dy.rowwise().sum();
          }
          if (!a.input_grads[0].empty()) {
            dcols.noalias() = kmat_b.transpose() * dy;
            col2im_add(dcols.data(), channels, height, width, k,
                       a.input_grads[0].data() + s * channels * height * width);
          }
        }
      });
}

Var max_pool2(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  require_rank(xv, 4, "max_pool2", "input");
  const std::size_t n = xv.dim(0), channels = xv.dim(1), height = xv.dim(2), width = xv.dim(3);
  const std::size_t oh = height / 2, ow = width / 2;
  if (oh == 0 || ow == 0) throw DimensionError("max_pool2: input " + shape_string(xv.shape()) + " too small");
  Tensor result({n, channels, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(result.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * channels; ++plane) {
    const double* src = xv.data() + plane * height * width;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++o) {
        std::size_t best = (2 * i) * width + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (2 * i + di) * width + 2 * j + dj;
            if (src[idx] > src[best]) best = idx;
          }
        }
        result[o] = src[best];
        (*argmax)[o] = plane * height * width + best;
      }
    }
  }
  return tape.record(std::move(result), {x}, [argmax](const BackwardArgs& a) {
    double* dx = a.input_grads[0].data();
    for (std::size_t i = 0; i < argmax->size(); ++i) dx[(*argmax)[i]] += a.output_grad[i];
  });
}

Var relu(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  Tensor result(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) result[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return tape.record(std::move(result), {x}, [](const BackwardArgs& a) {
    const Tensor& in = *a.inputs[0];
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > 0.0) a.input_grads[0][i] += a.output_grad[i];
    }
  });
}

Var tanh(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  Tensor result(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) result[i] = std::tanh(xv[i]);
  return tape.record(std::move(result), {x}, [](const BackwardArgs& a) {
    for (std::size_t i = 0; i < a.output.size(); ++i) {
      const double t = a.output[i];
      a.input_grads[0][i] += a.output_grad[i] * (1.0 - t * t);
    }
  });
}

Var flatten(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  const std::size_t n = xv.dim(0);
  return tape.record(xv.reshaped({n, xv.size() / n}), {x}, [](const BackwardArgs& a) {
    for (std::size_t i = 0; i < a.output_grad.size(); ++i) a.input_grads[0][i] += a.output_grad[i];
  });
}

Var dropout(Tape& tape, Var x, double rate, Mode mode, RngStream& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw UsageError("dropout rate must be in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return x;
  const Tensor& xv = tape.value(x);
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(xv.size());
  Tensor result(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    result[i] = xv[i] * (*mask)[i];
  }
  return tape.record(std::move(result), {x}, [mask](const BackwardArgs& a) {
    for (std::size_t i = 0; i < mask->size(); ++i) a.input_grads[0][i] += a.output_grad[i] * (*mask)[i];
  });
}

Var sum(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  double total = 0.0;
  for (double v : xv.values()) total += v;
  return tape.record(finite(Tensor::vector({total}), "sum"), {x}, [](const BackwardArgs& a) {
    for (double& g : a.input_grads[0]) g += a.output_grad[0];
  });
}

Var sum_squares(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  double total = 0.0;
  for (double v : xv.values()) total += v * v;
  return tape.record(finite(Tensor::vector({total}), "sum_squares"), {x}, [](const BackwardArgs& a) {
    const Tensor& in = *a.inputs[0];
    for (std::size_t i = 0; i < in.size(); ++i) a.input_grads[0][i] += 2.0 * in[i] * a.output_grad[0];
  });
}

Var scale(Tape& tape, Var x, double factor) {
  const Tensor& xv = tape.value(x);
  Tensor result(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) result[i] = factor * xv[i];
  return tape.record(finite(std::move(result), "scale"), {x}, [factor](const BackwardArgs& a) {
    for (std::size_t i = 0; i < a.output_grad.size(); ++i) a.input_grads[0][i] += factor * a.output_grad[i];
  });
}

Var add(Tape& tape, Var a_var, Var b_var) {
  const Tensor& av = tape.value(a_var);
  const Tensor& bv = tape.value(b_var);
  if (av.shape() != bv.shape()) {
    throw DimensionError("add: shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()) +
                         " differ");
  }
  Tensor result(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) result[i] = av[i] + bv[i];
  return tape.record(finite(std::move(result), "add"), {a_var, b_var}, [](const BackwardArgs& a) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (a.input_grads[k].empty()) continue;
      for (std::size_t i = 0; i < a.output_grad.size(); ++i) a.input_grads[k][i] += a.output_grad[i];
    }
  });
}

}  // namespace hyperbound::ops

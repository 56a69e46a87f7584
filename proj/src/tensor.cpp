#include "dsmm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dsmm {
namespace {

struct ConvGeometry {
  Index batch, channels, height, width;
  Index kh, kw, sh, sw, ph, pw;
  Index out_h, out_w;
  Index out_channels;

  Index patch_len() const { return channels * kh * kw; }
  Index positions() const { return out_h * out_w; }
};

ConvGeometry check_conv(const Tensor& input, const Tensor& kernels, const ConvSpec& spec) {
  if (input.rank() != 4)
    throw DimensionError("input", "conv input must be rank 4, got " + shape_string(input.shape()));
  if (kernels.rank() != 4)
    throw DimensionError("kernels",
                         "conv kernels must be rank 4, got " + shape_string(kernels.shape()));
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.kh = spec.kernel_size.first;
  g.kw = spec.kernel_size.second;
  g.sh = spec.stride.first;
  g.sw = spec.stride.second;
  g.ph = spec.padding.first;
  g.pw = spec.padding.second;
  g.out_channels = spec.out_channels;
  if (g.kh < 1 || g.kw < 1 || g.sh < 1 || g.sw < 1 || g.ph < 0 || g.pw < 0)
    throw ValidationError("invalid conv spec");
  if (kernels.dim(0) != g.out_channels)
    throw DimensionError("out_channels", "kernel count " + std::to_string(kernels.dim(0)) +
                                             " != spec out_channels " +
                                             std::to_string(g.out_channels));
  if (kernels.dim(1) != g.channels)
    throw DimensionError("channels", "kernel channels " + std::to_string(kernels.dim(1)) +
                                         " != input channels " + std::to_string(g.channels));
  if (kernels.dim(2) != g.kh)
    throw DimensionError("kernel_height", "kernel height does not match spec");
  if (kernels.dim(3) != g.kw)
    throw DimensionError("kernel_width", "kernel width does not match spec");
  g.out_h = ConvSpec::output_extent(g.height, g.ph, g.kh, g.sh);
  g.out_w = ConvSpec::output_extent(g.width, g.pw, g.kw, g.sw);
  if (g.out_h < 1)
    throw DimensionError("height", "input height " + std::to_string(g.height) +
                                       " too small for kernel " + std::to_string(g.kh));
  if (g.out_w < 1)
    throw DimensionError("width", "input width " + std::to_string(g.width) +
                                      " too small for kernel " + std::to_string(g.kw));
  return g;
}

// Unfolds batch item n into a (C*kh*kw) x (out_h*out_w) matrix. Rows are
// ordered channel-major, then kernel row, then kernel column.
void im2col(const Tensor& input, Index n, const ConvGeometry& g, RowMatrixXd& cols) {
  cols.resize(g.patch_len(), g.positions());
  const double* src = input.data() + n * g.channels * g.height * g.width;
  for (Index c = 0; c < g.channels; ++c) {
    const double* plane = src + c * g.height * g.width;
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        double* row = cols.data() + ((c * g.kh + i) * g.kw + j) * g.positions();
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.sh - g.ph + i;
          double* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.sw - g.pw + j;
            dst[ow] = (iw < 0 || iw >= g.width) ? 0.0 : plane[ih * g.width + iw];
          }
        }
      }
    }
  }
}

void col2im_add(const RowMatrixXd& cols, Index n, const ConvGeometry& g, Tensor& grad_input) {
  double* dst = grad_input.data() + n * g.channels * g.height * g.width;
  for (Index c = 0; c < g.channels; ++c) {
    double* plane = dst + c * g.height * g.width;
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        const double* row = cols.data() + ((c * g.kh + i) * g.kw + j) * g.positions();
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.sh - g.ph + i;
          if (ih < 0 || ih >= g.height) continue;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.sw - g.pw + j;
            if (iw < 0 || iw >= g.width) continue;
            plane[ih * g.width + iw] += row[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

}  // namespace

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels,
                      const std::optional<Tensor>& bias, const ConvSpec& spec) {
  const ConvGeometry g = check_conv(input, kernels, spec);
  if (spec.has_bias) {
    if (!bias) throw DimensionError("bias", "conv spec requires a bias tensor");
    if (bias->size() != g.out_channels)
      throw DimensionError("bias", "bias length " + std::to_string(bias->size()) +
                                       " != out_channels " + std::to_string(g.out_channels));
  }

  Tensor out({g.batch, g.out_channels, g.out_h, g.out_w});
  const Eigen::Map<const RowMatrixXd> weights(kernels.data(), g.out_channels, g.patch_len());
  RowMatrixXd cols;
  for (Index n = 0; n < g.batch; ++n) {
    im2col(input, n, g, cols);
    Eigen::Map<RowMatrixXd> dst(out.data() + n * g.out_channels * g.positions(), g.out_channels,
                                g.positions());
    dst.noalias() = weights * cols;
    if (spec.has_bias) dst.colwise() += bias->vec();
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const ConvSpec& spec,
                          const Tensor& grad_output) {
  const ConvGeometry g = check_conv(input, kernels, spec);
  const Tensor::Shape expected{g.batch, g.out_channels, g.out_h, g.out_w};
  if (grad_output.shape() != expected)
    throw DimensionError("grad_output", "grad_output shape " + shape_string(grad_output.shape()) +
                                            " != forward output shape " + shape_string(expected));

  ConvGrads grads{Tensor::zeros_like(input), Tensor::zeros_like(kernels), std::nullopt};
  if (spec.has_bias) grads.bias = Tensor({g.out_channels});

  const Eigen::Map<const RowMatrixXd> weights(kernels.data(), g.out_channels, g.patch_len());
  Eigen::Map<RowMatrixXd> grad_weights(grads.kernels.data(), g.out_channels, g.patch_len());
  RowMatrixXd cols;
  RowMatrixXd grad_cols;
  for (Index n = 0; n < g.batch; ++n) {
    const Eigen::Map<const RowMatrixXd> go(grad_output.data() + n * g.out_channels * g.positions(),
                                           g.out_channels, g.positions());
    im2col(input, n, g, cols);
    grad_weights.noalias() += go * cols.transpose();
    if (spec.has_bias) grads.bias->vec() += go.rowwise().sum();
    grad_cols.noalias() = weights.transpose() * go;
    col2im_add(grad_cols, n, g, grads.input);
  }
  return grads;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  out.vec() = input.vec().cwiseMax(0.0);
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  if (!input.same_shape(grad_output))
    throw DimensionError("grad_output", "relu_backward shape mismatch");
  Tensor out = grad_output;
  out.vec() = (input.vec().array() > 0.0).select(grad_output.vec(), 0.0);
  return out;
}

LossResult mse_loss(const Tensor& pred, const Tensor& target, LossDivisor divisor) {
  if (!pred.same_shape(target))
    throw DimensionError("pred", "mse_loss shape mismatch: " + shape_string(pred.shape()) +
                                     " vs " + shape_string(target.shape()));
  double denom = static_cast<double>(pred.dim(0));
  if (divisor == LossDivisor::kBatchAndPixels)
    denom *= static_cast<double>(pred.size() / pred.dim(0));
  LossResult r;
  r.grad = pred;
  r.grad.vec() = (pred.vec() - target.vec()) / denom;
  r.loss = 0.5 * (pred.vec() - target.vec()).squaredNorm() / denom;
  return r;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& at,
                        double eps) {
  if (!(eps > 0.0)) throw ValidationError("finite_diff_grad: eps must be positive");
  Tensor grad = Tensor::zeros_like(at);
  Tensor probe = at;
  for (Index i = 0; i < at.size(); ++i) {
    const double orig = at[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double relative_error(const Tensor& analytic, const Tensor& numeric) {
  if (!analytic.same_shape(numeric)) throw DimensionError("grad", "relative_error shape mismatch");
  const double scale = std::max(analytic.vec().norm(), numeric.vec().norm());
  if (scale == 0.0) return 0.0;
  return (analytic.vec() - numeric.vec()).norm() / scale;
}

}  // namespace dsmm

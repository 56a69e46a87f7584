#include "dsmm/reconstruction.hpp"

#include <cmath>

namespace dsmm {
namespace {

void fill_he(Tensor& weights, Rng& rng) {
  const double fan_in = static_cast<double>(weights.dim(1) * weights.dim(2) * weights.dim(3));
  auto v = weights.vec();
  fill_normal(v, rng, std::sqrt(2.0 / fan_in));
  weights.vec() = v;
}

}  // namespace

ReconstructionParams ReconstructionParams::zeros(Index block_size, Index n_b, Index features,
                                                 bool residual) {
  if (block_size < 1 || n_b < 1 || features < 1)
    throw ValidationError("reconstruction geometry must be positive");
  const Index n_B = block_size * block_size;
  ReconstructionParams p;
  p.block_size = block_size;
  p.n_b = n_b;
  p.residual = residual;
  p.init_weights = Tensor({n_B, n_b, 1, 1});
  p.init_bias = Tensor({n_B});
  p.stack[0] = {Tensor({features, 1, 3, 3}), Tensor({features})};
  p.stack[1] = {Tensor({features, features, 3, 3}), Tensor({features})};
  p.stack[2] = {Tensor({1, features, 3, 3}), Tensor({1})};
  return p;
}

ReconstructionParams ReconstructionParams::random(Index block_size, Index n_b, Rng& rng,
                                                  Index features, bool residual) {
  ReconstructionParams p = zeros(block_size, n_b, features, residual);
  auto v = p.init_weights.vec();
  fill_normal(v, rng, 1.0 / std::sqrt(static_cast<double>(n_b)));
  p.init_weights.vec() = v;
  for (auto& layer : p.stack) fill_he(layer.weights, rng);
  return p;
}

std::vector<Tensor*> ReconstructionParams::tensors() {
  return {&init_weights,     &init_bias,     &stack[0].weights, &stack[0].bias,
          &stack[1].weights, &stack[1].bias, &stack[2].weights, &stack[2].bias};
}

std::vector<const Tensor*> ReconstructionParams::tensors() const {
  return {&init_weights,     &init_bias,     &stack[0].weights, &stack[0].bias,
          &stack[1].weights, &stack[1].bias, &stack[2].weights, &stack[2].bias};
}

const std::vector<std::string>& ReconstructionParams::tensor_names() {
  static const std::vector<std::string> names{"init.weights",  "init.bias",     "conv1.weights",
                                              "conv1.bias",    "conv2.weights", "conv2.bias",
                                              "conv3.weights", "conv3.bias"};
  return names;
}

ConvSpec init_conv_spec(const ReconstructionParams& params) {
  ConvSpec spec;
  spec.kernel_size = {1, 1};
  spec.stride = {1, 1};
  spec.out_channels = params.init_weights.dim(0);
  spec.has_bias = true;
  return spec;
}

ConvSpec stack_conv_spec(const ReconstructionParams& params, int layer) {
  ConvSpec spec;
  spec.kernel_size = {3, 3};
  spec.stride = {1, 1};
  spec.padding = {1, 1};
  spec.out_channels = params.stack[static_cast<size_t>(layer)].weights.dim(0);
  spec.has_bias = true;
  return spec;
}

Tensor reshape_concat(const Tensor& feature, Index block_size) {
  const Index B = block_size;
  if (feature.rank() != 4) throw DimensionError("feature", "reshape_concat expects rank 4");
  if (feature.dim(1) != B * B)
    throw ValidationError("reshape_concat: channel count " + std::to_string(feature.dim(1)) +
                          " != block_size^2 = " + std::to_string(B * B));
  const Index N = feature.dim(0), h = feature.dim(2), w = feature.dim(3);
  Tensor out({N, 1, h * B, w * B});
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < B * B; ++c) {
      const Index r = c / B, q = c % B;
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) out(n, 0, i * B + r, j * B + q) = feature(n, c, i, j);
    }
  return out;
}

Tensor reshape_concat_backward(const Tensor& grad, Index block_size) {
  const Index B = block_size;
  if (grad.rank() != 4 || grad.dim(1) != 1)
    throw DimensionError("channels", "reshape_concat_backward expects [N,1,H,W]");
  if (grad.dim(2) % B != 0 || grad.dim(3) % B != 0)
    throw ValidationError("reshape_concat_backward: spatial dims must be multiples of B");
  const Index N = grad.dim(0), h = grad.dim(2) / B, w = grad.dim(3) / B;
  Tensor out({N, B * B, h, w});
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < B * B; ++c) {
      const Index r = c / B, q = c % B;
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) out(n, c, i, j) = grad(n, 0, i * B + r, j * B + q);
    }
  return out;
}

Tensor initial_reconstruction(const Tensor& measurements, const ReconstructionParams& params) {
  if (measurements.rank() != 4 || measurements.dim(1) != params.n_b)
    throw DimensionError("channels", "measurements " + shape_string(measurements.shape()) +
                                         " do not carry n_b=" + std::to_string(params.n_b) +
                                         " channels");
  const Tensor lifted = conv2d_forward(measurements, params.init_weights, params.init_bias,
                                       init_conv_spec(params));
  return reshape_concat(lifted, params.block_size);
}

Tensor reconstruct_learned(const Tensor& measurements, const ReconstructionParams& recon) {
  const Tensor initial = initial_reconstruction(measurements, recon);
  const Tensor act1 = relu(conv2d_forward(initial, recon.stack[0].weights, recon.stack[0].bias,
                                          stack_conv_spec(recon, 0)));
  const Tensor act2 = relu(conv2d_forward(act1, recon.stack[1].weights, recon.stack[1].bias,
                                          stack_conv_spec(recon, 1)));
  Tensor out = conv2d_forward(act2, recon.stack[2].weights, recon.stack[2].bias,
                              stack_conv_spec(recon, 2));
  if (recon.residual) out.vec() += initial.vec();
  return out;
}

ForwardCache forward(const Tensor& x, const MeasurementMatrix& phi,
                     const ReconstructionParams& recon) {
  if (phi.block_size != recon.block_size || phi.n_b() != recon.n_b)
    throw DimensionError("n_b", "measurement matrix geometry does not match reconstructor");
  ForwardCache c;
  c.input = x;
  c.phi = phi;
  c.measurements = sample_image(x, phi);
  c.lifted = conv2d_forward(c.measurements, recon.init_weights, recon.init_bias,
                            init_conv_spec(recon));
  c.initial = reshape_concat(c.lifted, recon.block_size);
  c.pre1 = conv2d_forward(c.initial, recon.stack[0].weights, recon.stack[0].bias,
                          stack_conv_spec(recon, 0));
  c.act1 = relu(c.pre1);
  c.pre2 = conv2d_forward(c.act1, recon.stack[1].weights, recon.stack[1].bias,
                          stack_conv_spec(recon, 1));
  c.act2 = relu(c.pre2);
  c.refinement = conv2d_forward(c.act2, recon.stack[2].weights, recon.stack[2].bias,
                                stack_conv_spec(recon, 2));
  c.output = c.refinement;
  if (recon.residual) c.output.vec() += c.initial.vec();
  return c;
}

ForwardCache forward(const Tensor& x, SamplingLayerState& sampling,
                     const ReconstructionParams& recon) {
  return forward(x, sampling.constrained_matrix(), recon);
}

NetworkGrads backward(const ForwardCache& c, const ReconstructionParams& recon,
                      const Tensor& grad_output) {
  if (!grad_output.same_shape(c.output))
    throw DimensionError("grad_output", "grad_output shape " + shape_string(grad_output.shape()) +
                                            " != output shape " + shape_string(c.output.shape()));
  NetworkGrads g;
  g.recon = ReconstructionParams::zeros(recon.block_size, recon.n_b, recon.features(),
                                        recon.residual);

  ConvGrads l3 = conv2d_backward(c.act2, recon.stack[2].weights, stack_conv_spec(recon, 2),
                                 grad_output);
  ConvGrads l2 = conv2d_backward(c.act1, recon.stack[1].weights, stack_conv_spec(recon, 1),
                                 relu_backward(c.pre2, l3.input));
  ConvGrads l1 = conv2d_backward(c.initial, recon.stack[0].weights, stack_conv_spec(recon, 0),
                                 relu_backward(c.pre1, l2.input));
  Tensor grad_initial = std::move(l1.input);
  if (recon.residual) grad_initial.vec() += grad_output.vec();

  ConvGrads lift = conv2d_backward(c.measurements, recon.init_weights, init_conv_spec(recon),
                                   reshape_concat_backward(grad_initial, recon.block_size));
  ConvGrads sampling = conv2d_backward(c.input, phi_kernels(c.phi), sampling_conv_spec(c.phi),
                                       lift.input);

  g.phi = Eigen::Map<const RowMatrixXd>(sampling.kernels.data(), c.phi.n_b(), c.phi.n_B());
  g.recon.init_weights = std::move(lift.kernels);
  g.recon.init_bias = std::move(*lift.bias);
  g.recon.stack[0] = {std::move(l1.kernels), std::move(*l1.bias)};
  g.recon.stack[1] = {std::move(l2.kernels), std::move(*l2.bias)};
  g.recon.stack[2] = {std::move(l3.kernels), std::move(*l3.bias)};
  return g;
}

}  // namespace dsmm

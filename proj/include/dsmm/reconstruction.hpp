#pragma once

#include <array>
#include <string>
#include <vector>

#include "dsmm/random.hpp"
#include "dsmm/sampling.hpp"
#include "dsmm/tensor.hpp"

namespace dsmm {

struct ConvLayer {
  Tensor weights;  // [out, in, 3, 3]
  Tensor bias;     // [out]
};

inline constexpr Index kDefaultFeatures = 64;

// Learned reconstructor: a 1x1 convolution lifting n_b measurement channels
// to B^2 channels, reshape+concat back to image space, then three 3x3
// zero-padded convolutions (1 -> F -> F -> 1, ReLU after the first two).
// The same struct doubles as the gradient container.
struct ReconstructionParams {
  Index block_size = 0;
  Index n_b = 0;
  bool residual = true;
  Tensor init_weights;  // [B^2, n_b, 1, 1]
  Tensor init_bias;     // [B^2]
  std::array<ConvLayer, 3> stack;

  Index features() const { return stack[0].weights.dim(0); }

  static ReconstructionParams zeros(Index block_size, Index n_b, Index features = kDefaultFeatures,
                                    bool residual = true);
  // init N(0, 1/n_b); stack He-normal N(0, 2/fan_in); biases zero.
  static ReconstructionParams random(Index block_size, Index n_b, Rng& rng,
                                     Index features = kDefaultFeatures, bool residual = true);

  // Stable traversal order used by the optimizer and the checkpoint format.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  static const std::vector<std::string>& tensor_names();
};

ConvSpec init_conv_spec(const ReconstructionParams& params);
ConvSpec stack_conv_spec(const ReconstructionParams& params, int layer);

// [N, B^2, h, w] -> [N, 1, h*B, w*B]; each channel vector fills its block in
// row-major order.
Tensor reshape_concat(const Tensor& feature, Index block_size);
// Adjoint (and inverse) of reshape_concat.
Tensor reshape_concat_backward(const Tensor& grad, Index block_size);

Tensor initial_reconstruction(const Tensor& measurements, const ReconstructionParams& params);

// Intermediates kept for the backward pass.
struct ForwardCache {
  Tensor input;
  MeasurementMatrix phi;
  Tensor measurements;
  Tensor lifted;   // 1x1 conv output
  Tensor initial;  // after reshape+concat
  Tensor pre1, act1, pre2, act2;
  Tensor refinement;
  Tensor output;
};

// Learned reconstruction straight from block measurements [N, n_b, h, w].
Tensor reconstruct_learned(const Tensor& measurements, const ReconstructionParams& recon);

ForwardCache forward(const Tensor& x, const MeasurementMatrix& phi,
                     const ReconstructionParams& recon);
ForwardCache forward(const Tensor& x, SamplingLayerState& sampling,
                     const ReconstructionParams& recon);

struct NetworkGrads {
  RowMatrixXd phi;  // w.r.t. the constrained kernels actually used in forward
  ReconstructionParams recon;
};

NetworkGrads backward(const ForwardCache& cache, const ReconstructionParams& recon,
                      const Tensor& grad_output);

}  // namespace dsmm

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsmm/random.hpp"
#include "dsmm/reconstruction.hpp"
#include "dsmm/sampling.hpp"
#include "dsmm/tensor.hpp"

namespace dsmm {

enum class LrInterpolation { kGeometric, kLinear };

// Three phases: constant, decay from phase2_start_rate to phase2_end_rate,
// constant. Epoch boundaries are inclusive and 1-based.
struct LrSchedule {
  int phase1_end = 30;
  int phase2_end = 70;
  double phase1_rate = 1e-3;
  double phase2_start_rate = 1e-4;
  double phase2_end_rate = 1e-6;
  double phase3_rate = 1e-6;
  LrInterpolation interpolation = LrInterpolation::kGeometric;
};

double lr_at(int epoch, int total_epochs, const LrSchedule& schedule);

struct AugmentConfig {
  bool enabled = true;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double hflip_prob = 0.5;
};

struct TrainConfig {
  Index block_size = 32;
  double sampling_ratio = 0.1;
  double alpha = 0.2;
  Index patch_size = 96;
  Index batch_size = 32;
  int epochs = 100;
  int iters_per_epoch = 600;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool decay_sampling = true;
  bool decay_reconstruction = true;
  LrSchedule lr_schedule;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  LossDivisor loss_divisor = LossDivisor::kBatch;
  Index features = kDefaultFeatures;
  bool residual = true;
  int checkpoint_every = 10;

  Index n_b() const { return measurement_dim(sampling_ratio, block_size); }

  // Throws ValidationError whose message starts with the offending field.
  void validate() const;
};

// Classical momentum:
//   buffer <- momentum * buffer - gamma * (grad + weight_decay * param)
//   param  <- param + buffer
template <typename P, typename G, typename B>
void sgd_update(Eigen::MatrixBase<P>& param, const Eigen::MatrixBase<G>& grad,
                Eigen::MatrixBase<B>& buffer, double gamma, double momentum, double weight_decay) {
  buffer.derived() = momentum * buffer - gamma * (grad + weight_decay * param);
  param.derived() += buffer;
}

inline void sgd_update(Tensor& param, const Tensor& grad, Tensor& buffer, double gamma,
                       double momentum, double weight_decay) {
  if (!param.same_shape(grad) || !param.same_shape(buffer))
    throw DimensionError("param", "sgd_update shape mismatch");
  sgd_update(param.vec(), grad.vec(), buffer.vec(), gamma, momentum, weight_decay);
}

struct OptimizerState {
  RowMatrixXd theta_buffer;
  std::vector<Tensor> recon_buffers;  // ReconstructionParams::tensors() order

  static OptimizerState zeros_like(const SamplingLayerState& sampling,
                                   const ReconstructionParams& recon);
};

struct AugmentDraw {
  double scale = 1.0;
  bool flip = false;
};

AugmentDraw draw_augment(const AugmentConfig& cfg, Rng& rng);

// Half-pixel-centred bilinear resize with edge clamping.
RowMatrixXd resize_bilinear(const RowMatrixXd& src, Index out_h, Index out_w);

// Rescale by draw.scale, centre-crop or edge-pad back to the input size,
// optional horizontal flip, clamp to [0,1].
RowMatrixXd augment(const RowMatrixXd& patch, const AugmentDraw& draw);
RowMatrixXd augment(const RowMatrixXd& patch, const AugmentConfig& cfg, Rng& rng);

// Training patches drawn from in-memory grayscale images in [0,1]. Every
// patch is a pure function of (seed, epoch, iteration, batch slot).
class PatchDataset {
 public:
  explicit PatchDataset(std::vector<RowMatrixXd> images);

  Index size() const { return static_cast<Index>(images_.size()); }
  const RowMatrixXd& image(Index i) const { return images_[static_cast<size_t>(i)]; }

  RowMatrixXd patch(const TrainConfig& cfg, int epoch, int iteration, Index slot) const;
  Tensor batch(const TrainConfig& cfg, int epoch, int iteration) const;

 private:
  std::vector<RowMatrixXd> images_;
};

struct StepResult {
  double loss = 0.0;
  RowMatrixXd theta_saved;     // theta_G taken before the constrained forward
  RowMatrixXd theta_restored;  // theta_s entering the sampling-layer update
  RowMatrixXd theta_grad;      // modulated gradient fed to the optimizer
};

// One iteration of joint training. The sampling kernels are constrained for
// the forward pass, restored to their unconstrained values afterwards, and
// updated with the backprop gradient scaled by normalization_derivative of
// the sparsified kernels.
StepResult train_step(const Tensor& batch, SamplingLayerState& sampling,
                      ReconstructionParams& recon, OptimizerState& opt, double gamma,
                      const TrainConfig& cfg);

struct LossRecord {
  long iteration = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  SamplingLayerState sampling;
  ReconstructionParams recon;
  std::vector<LossRecord> history;
};

struct TrainCallbacks {
  std::function<void(const LossRecord&)> on_iteration;
  std::function<void(int epoch, SamplingLayerState&, const ReconstructionParams&)> on_checkpoint;
};

// Fresh parameters for cfg, drawn from the "init" stream.
TrainResult initialize(const TrainConfig& cfg);

TrainResult train(const PatchDataset& dataset, const TrainConfig& cfg,
                  const TrainCallbacks& callbacks = {});

}  // namespace dsmm

#include "dsmm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dsmm/parallel.hpp"

namespace dsmm {
namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw ValidationError(field + ": " + why);
}

std::vector<Index> epoch_order(std::uint64_t seed, int epoch, Index count) {
  std::vector<Index> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = make_rng(seed, "shuffle", {static_cast<std::uint64_t>(epoch)});
  // Fisher-Yates with an explicit uniform draw keeps the order independent of
  // the standard library's shuffle implementation.
  for (Index i = count - 1; i > 0; --i) {
    std::uniform_int_distribution<Index> pick(0, i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(pick(rng))]);
  }
  return order;
}

}  // namespace

double lr_at(int epoch, int total_epochs, const LrSchedule& s) {
  if (epoch < 1 || epoch > total_epochs)
    throw ValidationError("epoch " + std::to_string(epoch) + " outside [1, " +
                          std::to_string(total_epochs) + "]");
  if (epoch <= s.phase1_end) return s.phase1_rate;
  if (epoch <= s.phase2_end) {
    const int span = s.phase2_end - s.phase1_end;
    if (span <= 1) return s.phase2_start_rate;
    const double t = static_cast<double>(epoch - s.phase1_end - 1) / (span - 1);
    if (t >= 1.0) return s.phase2_end_rate;
    if (s.interpolation == LrInterpolation::kLinear)
      return s.phase2_start_rate + t * (s.phase2_end_rate - s.phase2_start_rate);
    const double lo = std::log10(s.phase2_start_rate);
    const double hi = std::log10(s.phase2_end_rate);
    return std::pow(10.0, lo + t * (hi - lo));
  }
  return s.phase3_rate;
}

void TrainConfig::validate() const {
  if (block_size < 1) bad_field("block_size", "must be >= 1");
  if (!(sampling_ratio > 0.0 && sampling_ratio <= 1.0)) bad_field("sampling_ratio", "must lie in (0,1]");
  if (!(alpha >= 0.0 && alpha <= 1.0)) bad_field("alpha", "must lie in [0,1]");
  if (sampling_ratio * static_cast<double>(block_size * block_size) + 1e-9 < 1.0)
    bad_field("sampling_ratio", "ratio too small for block size");
  if (patch_size < block_size) bad_field("patch_size", "must be >= block_size");
  if (patch_size % block_size != 0) bad_field("patch_size", "must be a multiple of block_size");
  if (batch_size < 1) bad_field("batch_size", "must be >= 1");
  if (epochs < 0) bad_field("epochs", "must be >= 0");
  if (iters_per_epoch < 1) bad_field("iters_per_epoch", "must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad_field("momentum", "must lie in [0,1)");
  if (!(weight_decay >= 0.0)) bad_field("weight_decay", "must be >= 0");
  if (features < 1) bad_field("features", "must be >= 1");
  if (checkpoint_every < 0) bad_field("checkpoint_every", "must be >= 0");
  const LrSchedule& s = lr_schedule;
  if (s.phase1_end < 0 || s.phase2_end < s.phase1_end)
    bad_field("lr_schedule", "phase boundaries must satisfy 0 <= phase1_end <= phase2_end");
  for (double r : {s.phase1_rate, s.phase2_start_rate, s.phase2_end_rate, s.phase3_rate})
    if (!(r > 0.0)) bad_field("lr_schedule", "rates must be positive");
  if (s.phase2_start_rate > s.phase1_rate || s.phase2_end_rate > s.phase2_start_rate ||
      s.phase3_rate > s.phase2_end_rate)
    bad_field("lr_schedule", "rates must be non-increasing across phases");
  if (!(augment.scale_min > 0.0 && augment.scale_min <= augment.scale_max))
    bad_field("augment.scale_range", "must satisfy 0 < min <= max");
  if (!(augment.hflip_prob >= 0.0 && augment.hflip_prob <= 1.0))
    bad_field("augment.hflip_prob", "must lie in [0,1]");
}

OptimizerState OptimizerState::zeros_like(const SamplingLayerState& sampling,
                                          const ReconstructionParams& recon) {
  OptimizerState opt;
  opt.theta_buffer = RowMatrixXd::Zero(sampling.n_b(), sampling.n_B());
  for (const Tensor* t : recon.tensors()) opt.recon_buffers.push_back(Tensor::zeros_like(*t));
  return opt;
}

AugmentDraw draw_augment(const AugmentConfig& cfg, Rng& rng) {
  AugmentDraw d;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  d.scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * unit(rng);
  d.flip = unit(rng) < cfg.hflip_prob;
  return d;
}

RowMatrixXd resize_bilinear(const RowMatrixXd& src, Index out_h, Index out_w) {
  if (out_h == src.rows() && out_w == src.cols()) return src;
  RowMatrixXd out(out_h, out_w);
  const double sy = static_cast<double>(src.rows()) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.cols()) / static_cast<double>(out_w);
  auto coord = [](Index dst, double scale, Index extent, Index& i0, Index& i1, double& frac) {
    double p = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    p = std::clamp(p, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<Index>(std::floor(p));
    i1 = std::min(i0 + 1, extent - 1);
    frac = p - static_cast<double>(i0);
  };
  for (Index r = 0; r < out_h; ++r) {
    Index y0, y1;
    double fy;
    coord(r, sy, src.rows(), y0, y1, fy);
    for (Index c = 0; c < out_w; ++c) {
      Index x0, x1;
      double fx;
      coord(c, sx, src.cols(), x0, x1, fx);
      const double top = src(y0, x0) + fx * (src(y0, x1) - src(y0, x0));
      const double bottom = src(y1, x0) + fx * (src(y1, x1) - src(y1, x0));
      out(r, c) = top + fy * (bottom - top);
    }
  }
  return out;
}

RowMatrixXd augment(const RowMatrixXd& patch, const AugmentDraw& draw) {
  if (patch.rows() != patch.cols()) throw ValidationError("augment expects a square patch");
  const Index P = patch.rows();
  const Index Q = std::max<Index>(1, std::llround(static_cast<double>(P) * draw.scale));
  const RowMatrixXd scaled = resize_bilinear(patch, Q, Q);
  RowMatrixXd out(P, P);
  if (Q >= P) {
    const Index off = (Q - P) / 2;
    out = scaled.block(off, off, P, P);
  } else {
    const Index off = (P - Q) / 2;
    for (Index r = 0; r < P; ++r)
      for (Index c = 0; c < P; ++c)
        out(r, c) = scaled(std::clamp<Index>(r - off, 0, Q - 1), std::clamp<Index>(c - off, 0, Q - 1));
  }
  if (draw.flip) out = out.rowwise().reverse().eval();
  return out.cwiseMax(0.0).cwiseMin(1.0);
}

RowMatrixXd augment(const RowMatrixXd& patch, const AugmentConfig& cfg, Rng& rng) {
  return augment(patch, draw_augment(cfg, rng));
}

PatchDataset::PatchDataset(std::vector<RowMatrixXd> images) : images_(std::move(images)) {
  if (images_.empty()) throw ValidationError("dataset: no images");
  for (const auto& im : images_)
    if (im.size() == 0) throw ValidationError("dataset: empty image");
}

RowMatrixXd PatchDataset::patch(const TrainConfig& cfg, int epoch, int iteration,
                                Index slot) const {
  const Index P = cfg.patch_size;
  const std::vector<Index> order = epoch_order(cfg.seed, epoch, size());
  const Index global = static_cast<Index>(iteration) * cfg.batch_size + slot;
  const auto index = static_cast<size_t>(order[static_cast<size_t>(global % size())]);
  const RowMatrixXd& img = images_[index];
  if (img.rows() < P || img.cols() < P)
    throw ValidationError("dataset: image " + std::to_string(index) + " (" +
                          std::to_string(img.rows()) + "x" + std::to_string(img.cols()) +
                          ") is smaller than patch_size " + std::to_string(P));

  const std::initializer_list<std::uint64_t> key{static_cast<std::uint64_t>(epoch),
                                                 static_cast<std::uint64_t>(iteration),
                                                 static_cast<std::uint64_t>(slot)};
  AugmentDraw draw;
  if (cfg.augment.enabled) {
    Rng arng = make_rng(cfg.seed, "augment", key);
    draw = draw_augment(cfg.augment, arng);
  }
  // The source region is scaled at extraction time: a region of P / scale
  // pixels is resampled to P.
  Index region = std::llround(static_cast<double>(P) / draw.scale);
  region = std::clamp<Index>(region, 1, std::min(img.rows(), img.cols()));

  Rng prng = make_rng(cfg.seed, "patch", key);
  std::uniform_int_distribution<Index> top_dist(0, img.rows() - region);
  std::uniform_int_distribution<Index> left_dist(0, img.cols() - region);
  const Index top = top_dist(prng);
  const Index left = left_dist(prng);

  RowMatrixXd out = resize_bilinear(img.block(top, left, region, region), P, P);
  if (draw.flip) out = out.rowwise().reverse().eval();
  return out.cwiseMax(0.0).cwiseMin(1.0);
}

Tensor PatchDataset::batch(const TrainConfig& cfg, int epoch, int iteration) const {
  const Index P = cfg.patch_size;
  Tensor out({cfg.batch_size, 1, P, P});
  for (Index k = 0; k < cfg.batch_size; ++k) {
    const RowMatrixXd p = patch(cfg, epoch, iteration, k);
    out.vec().segment(k * P * P, P * P) = Eigen::Map<const Eigen::VectorXd>(p.data(), P * P);
  }
  return out;
}

StepResult train_step(const Tensor& batch, SamplingLayerState& sampling,
                      ReconstructionParams& recon, OptimizerState& opt, double gamma,
                      const TrainConfig& cfg) {
  if (batch.rank() != 4 || batch.dim(1) != 1)
    throw DimensionError("batch", "train_step expects [N,1,P,P], got " + shape_string(batch.shape()));
  const Index N = batch.dim(0);
  StepResult result;

  // theta_G <- theta_s
  result.theta_saved = sampling.theta();
  // theta_s <- F(S(theta_s)); the constrained view is what the forward sees.
  const MeasurementMatrix phi = sampling.constrained_matrix();
  const ConstrainedMatrix constrained = *sampling.cached();

  double denom = static_cast<double>(N);
  if (cfg.loss_divisor == LossDivisor::kBatchAndPixels)
    denom *= static_cast<double>(batch.item_size());

  std::vector<double> item_loss(static_cast<size_t>(N));
  std::vector<NetworkGrads> item_grads(static_cast<size_t>(N));
  parallel_for(N, [&](Index n) {
    const Tensor x = batch.item(n);
    const ForwardCache cache = forward(x, phi, recon);
    Tensor grad = cache.output;
    grad.vec() = (cache.output.vec() - x.vec()) / denom;
    item_loss[static_cast<size_t>(n)] = 0.5 * (cache.output.vec() - x.vec()).squaredNorm() / denom;
    item_grads[static_cast<size_t>(n)] = backward(cache, recon, grad);
  });

  // Reduce in batch-index order.
  double loss = 0.0;
  for (double l : item_loss) loss += l;
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "non-finite loss " << loss << " (learning rate " << gamma << " may be too large)";
    throw NonFiniteLoss(os.str());
  }
  NetworkGrads total = std::move(item_grads.front());
  std::vector<Tensor*> total_tensors = total.recon.tensors();
  for (size_t n = 1; n < item_grads.size(); ++n) {
    total.phi += item_grads[n].phi;
    const std::vector<Tensor*> g = item_grads[n].recon.tensors();
    for (size_t t = 0; t < g.size(); ++t) total_tensors[t]->vec() += g[t]->vec();
  }

  const double recon_decay = cfg.decay_reconstruction ? cfg.weight_decay : 0.0;
  std::vector<Tensor*> params = recon.tensors();
  for (size_t t = 0; t < params.size(); ++t)
    sgd_update(*params[t], *total_tensors[t], opt.recon_buffers[t], gamma, cfg.momentum,
               recon_decay);

  // theta_s <- theta_G
  sampling.mutable_theta() = result.theta_saved;
  result.theta_restored = sampling.theta();

  RowMatrixXd modulation(sampling.n_b(), sampling.n_B());
  for (Index k = 0; k < sampling.n_b(); ++k)
    modulation.row(k) = normalization_derivative(constrained.sparse.row(k));
  result.theta_grad = total.phi.cwiseProduct(modulation);

  const double sampling_decay = cfg.decay_sampling ? cfg.weight_decay : 0.0;
  sgd_update(sampling.mutable_theta(), result.theta_grad, opt.theta_buffer, gamma, cfg.momentum,
             sampling_decay);
  result.loss = loss;
  return result;
}

TrainResult initialize(const TrainConfig& cfg) {
  cfg.validate();
  Rng rng = make_rng(cfg.seed, "init");
  TrainResult r;
  r.sampling = SamplingLayerState::random(cfg.block_size, cfg.n_b(), cfg.alpha, rng);
  r.recon = ReconstructionParams::random(cfg.block_size, cfg.n_b(), rng, cfg.features, cfg.residual);
  return r;
}

TrainResult train(const PatchDataset& dataset, const TrainConfig& cfg,
                  const TrainCallbacks& callbacks) {
  TrainResult r = initialize(cfg);
  if (cfg.epochs == 0) return r;
  OptimizerState opt = OptimizerState::zeros_like(r.sampling, r.recon);
  r.history.reserve(static_cast<size_t>(cfg.epochs) * static_cast<size_t>(cfg.iters_per_epoch));
  long iteration = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double gamma = lr_at(epoch, cfg.epochs, cfg.lr_schedule);
    for (int it = 0; it < cfg.iters_per_epoch; ++it) {
      const Tensor batch = dataset.batch(cfg, epoch, it);
      const StepResult step = train_step(batch, r.sampling, r.recon, opt, gamma, cfg);
      LossRecord rec{++iteration, epoch, gamma, step.loss};
      r.history.push_back(rec);
      if (callbacks.on_iteration) callbacks.on_iteration(rec);
    }
    const bool periodic = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
    if (callbacks.on_checkpoint && (periodic || epoch == cfg.epochs))
      callbacks.on_checkpoint(epoch, r.sampling, r.recon);
  }
  return r;
}

}  // namespace dsmm

#include "dsmm/sampling.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace dsmm {

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::kLearned:
      return "learned";
    case Provenance::kGaussian:
      return "gaussian";
    case Provenance::kImported:
      return "imported";
  }
  return "unknown";
}

void MeasurementMatrix::validate() const {
  if (block_size < 1) throw ValidationError("measurement matrix block_size must be >= 1");
  if (entries.rows() < 1 || entries.cols() < 1)
    throw ValidationError("measurement matrix has no entries");
  if (entries.cols() != block_size * block_size)
    throw ValidationError("measurement matrix n_B=" + std::to_string(entries.cols()) +
                          " does not equal block_size^2=" +
                          std::to_string(block_size * block_size));
  if (!(sparsity_degree >= 0.0 && sparsity_degree <= 1.0))
    throw ValidationError("measurement matrix sparsity degree outside [0,1]");
  if (provenance == Provenance::kImported) return;
  for (Index k = 0; k < entries.rows(); ++k) {
    const double norm = entries.row(k).norm();
    if (norm != 0.0 && std::abs(norm - 1.0) > 1e-9)
      throw ValidationError("row " + std::to_string(k) + " of a " + to_string(provenance) +
                            " matrix has norm " + std::to_string(norm) + ", expected 1");
  }
}

Index zeroed_count(Index total, double alpha) {
  const auto z = static_cast<Index>(std::llround((1.0 - alpha) * static_cast<double>(total)));
  return std::clamp<Index>(z, 0, total);
}

SparsityResult sparsity_constraint(const RowMatrixXd& theta, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ValidationError("sparsity degree alpha must lie in [0,1], got " + std::to_string(alpha));
  SparsityResult out{theta, 0.0};
  const Index total = theta.size();
  const Index z = zeroed_count(total, alpha);
  if (z == 0) return out;

  std::vector<Index> order(static_cast<size_t>(total));
  std::iota(order.begin(), order.end(), Index{0});
  const double* v = theta.data();
  auto by_magnitude = [v](Index a, Index b) {
    const double ma = std::abs(v[a]);
    const double mb = std::abs(v[b]);
    return ma < mb || (ma == mb && a < b);
  };
  // Only the first z positions need to be exact.
  std::nth_element(order.begin(), order.begin() + (z - 1), order.end(), by_magnitude);
  std::sort(order.begin(), order.begin() + z, by_magnitude);

  double* s = out.sparse.data();
  for (Index k = 0; k < z; ++k) s[order[static_cast<size_t>(k)]] = 0.0;
  out.mu = std::abs(v[order[static_cast<size_t>(z - 1)]]);
  return out;
}

ConstrainedMatrix constrain(const RowMatrixXd& theta, double alpha, Index block_size) {
  SparsityResult sparse = sparsity_constraint(theta, alpha);
  ConstrainedMatrix out;
  out.mu = sparse.mu;
  out.matrix.block_size = block_size;
  out.matrix.sparsity_degree = alpha;
  out.matrix.provenance = Provenance::kLearned;
  out.matrix.entries.resize(theta.rows(), theta.cols());
  out.flagged.assign(static_cast<size_t>(theta.rows()), false);
  for (Index k = 0; k < theta.rows(); ++k) {
    auto row = normalize_row(sparse.sparse.row(k));
    out.matrix.entries.row(k) = row.values;
    out.flagged[static_cast<size_t>(k)] = row.degenerate;
  }
  out.sparse = std::move(sparse.sparse);
  return out;
}

SamplingLayerState::SamplingLayerState(Index block_size, Index n_b, double alpha)
    : SamplingLayerState(block_size, RowMatrixXd::Zero(n_b, block_size * block_size), alpha) {}

SamplingLayerState::SamplingLayerState(Index block_size, RowMatrixXd theta, double alpha)
    : block_size_(block_size), alpha_(alpha), theta_(std::move(theta)) {
  if (block_size_ < 1) throw ValidationError("block_size must be >= 1");
  if (!(alpha_ >= 0.0 && alpha_ <= 1.0))
    throw ValidationError("sparsity degree alpha must lie in [0,1]");
  if (theta_.cols() != block_size_ * block_size_)
    throw DimensionError("n_B", "theta has " + std::to_string(theta_.cols()) +
                                    " columns, expected " +
                                    std::to_string(block_size_ * block_size_));
  flags_.assign(static_cast<size_t>(theta_.rows()), false);
}

SamplingLayerState SamplingLayerState::random(Index block_size, Index n_b, double alpha,
                                              Rng& rng) {
  RowMatrixXd theta(n_b, block_size * block_size);
  fill_normal(theta, rng, 1.0 / std::sqrt(static_cast<double>(theta.cols())));
  return SamplingLayerState(block_size, std::move(theta), alpha);
}

const MeasurementMatrix& SamplingLayerState::constrained_matrix() {
  if (!cached_) {
    cached_ = constrain(theta_, alpha_, block_size_);
    flags_ = cached_->flagged;
  }
  return cached_->matrix;
}

Index measurement_dim(double sampling_ratio, Index block_size) {
  if (!(sampling_ratio > 0.0 && sampling_ratio <= 1.0))
    throw ValidationError("sampling ratio must lie in (0,1], got " +
                          std::to_string(sampling_ratio));
  if (block_size < 1) throw ValidationError("block size must be >= 1");
  const double n_B = static_cast<double>(block_size * block_size);
  // The small slack absorbs representation error such as 0.29 * 100.
  const auto n_b = static_cast<Index>(std::floor(sampling_ratio * n_B + 1e-9));
  if (n_b < 1) throw ValidationError("ratio too small for block size");
  return n_b;
}

Tensor phi_kernels(const MeasurementMatrix& phi) {
  const Index B = phi.block_size;
  return Tensor({phi.n_b(), 1, B, B},
                Eigen::Map<const Eigen::VectorXd>(phi.entries.data(), phi.entries.size()));
}

ConvSpec sampling_conv_spec(const MeasurementMatrix& phi) {
  ConvSpec spec;
  spec.kernel_size = {phi.block_size, phi.block_size};
  spec.stride = {phi.block_size, phi.block_size};
  spec.out_channels = phi.n_b();
  spec.has_bias = false;
  return spec;
}

Tensor sample_image(const Tensor& image, const MeasurementMatrix& phi, double noise_sigma,
                    std::uint64_t rng_seed) {
  phi.validate();
  if (image.rank() != 4 || image.dim(1) != 1)
    throw DimensionError("channels", "sample_image expects a [N,1,H,W] image, got " +
                                         shape_string(image.shape()));
  const Index B = phi.block_size;
  if (image.dim(2) % B != 0)
    throw ValidationError("image height " + std::to_string(image.dim(2)) +
                          " must be a multiple of " + std::to_string(B));
  if (image.dim(3) % B != 0)
    throw ValidationError("image width " + std::to_string(image.dim(3)) +
                          " must be a multiple of " + std::to_string(B));
  if (noise_sigma < 0.0) throw ValidationError("noise_sigma must be >= 0");

  Tensor y = conv2d_forward(image, phi_kernels(phi), std::nullopt, sampling_conv_spec(phi));
  if (noise_sigma > 0.0) {
    Rng rng = make_rng(rng_seed, "noise");
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (Index i = 0; i < y.size(); ++i) y[i] += noise(rng);
  }
  return y;
}

}  // namespace dsmm

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "dsmm/random.hpp"
#include "dsmm/tensor.hpp"

namespace dsmm {

enum class Provenance : std::uint8_t { kLearned = 0, kGaussian = 1, kImported = 2 };

const char* to_string(Provenance p);

// Block measurement operator: n_b rows, one per measurement, each row a
// row-major vectorized B x B kernel.
struct MeasurementMatrix {
  Index block_size = 0;
  double sparsity_degree = 1.0;
  Provenance provenance = Provenance::kImported;
  RowMatrixXd entries;

  Index n_b() const { return entries.rows(); }
  Index n_B() const { return entries.cols(); }
  Index nonzeros() const { return (entries.array() != 0.0).count(); }

  // Throws ValidationError when n_B != block_size^2 or entries are empty.
  void validate() const;
};

// Rows whose energy falls below this are left as zeros and flagged.
inline constexpr double kDegenerateRowEnergy = 1e-12;

template <typename Scalar>
struct NormalizedRow {
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> values;
  bool degenerate = false;
};

// Unit L2 normalization of one kernel.
template <typename Derived>
NormalizedRow<typename Derived::Scalar> normalize_row(const Eigen::MatrixBase<Derived>& row) {
  using Scalar = typename Derived::Scalar;
  NormalizedRow<Scalar> out;
  const Scalar omega = row.squaredNorm();
  if (omega < Scalar(kDegenerateRowEnergy)) {
    out.values = row;
    out.degenerate = true;
    return out;
  }
  out.values = row / std::sqrt(omega);
  return out;
}

// Per-coordinate modulation used when updating the unconstrained kernels:
// (sqrt(w) - s_j^2 / sqrt(w)) / sqrt(w), w = sum s_i^2. This is evaluated in
// that form on purpose; it is not the diagonal of the normalization Jacobian.
// Degenerate rows return all ones.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 1, Eigen::Dynamic> normalization_derivative(
    const Eigen::MatrixBase<Derived>& row) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> out(row.size());
  const Scalar omega = row.squaredNorm();
  if (omega < Scalar(kDegenerateRowEnergy)) {
    out.setOnes();
    return out;
  }
  const Scalar root = std::sqrt(omega);
  for (Index j = 0; j < row.size(); ++j) {
    const Scalar s = row(j);
    out(j) = (root - s * s / root) / root;
  }
  return out;
}

// Number of entries zeroed for sparsity degree alpha over `total` entries.
Index zeroed_count(Index total, double alpha);

struct SparsityResult {
  RowMatrixXd sparse;
  double mu = 0.0;  // magnitude of the largest zeroed entry, 0 when none
};

// Zeroes exactly the round((1 - alpha) * size) smallest-magnitude entries;
// ties go to the lowest flat (row-major) index first.
SparsityResult sparsity_constraint(const RowMatrixXd& theta, double alpha);

struct ConstrainedMatrix {
  MeasurementMatrix matrix;
  RowMatrixXd sparse;          // S(theta) before normalization
  std::vector<bool> flagged;   // rows zeroed entirely by sparsification
  double mu = 0.0;
};

ConstrainedMatrix constrain(const RowMatrixXd& theta, double alpha, Index block_size);

// Trainable sampling layer. theta holds the unconstrained kernels; the
// constrained view is computed on demand and cached until theta changes.
class SamplingLayerState {
 public:
  SamplingLayerState() = default;
  SamplingLayerState(Index block_size, Index n_b, double alpha);
  SamplingLayerState(Index block_size, RowMatrixXd theta, double alpha);

  // Kernels drawn i.i.d. N(0, 1/n_B).
  static SamplingLayerState random(Index block_size, Index n_b, double alpha, Rng& rng);

  const RowMatrixXd& theta() const { return theta_; }
  // Any write through this reference drops the cached constrained view.
  RowMatrixXd& mutable_theta() {
    cached_.reset();
    return theta_;
  }

  double alpha() const { return alpha_; }
  Index block_size() const { return block_size_; }
  Index n_b() const { return theta_.rows(); }
  Index n_B() const { return theta_.cols(); }

  const std::optional<ConstrainedMatrix>& cached() const { return cached_; }
  const std::vector<bool>& zero_row_flags() const { return flags_; }

  // F(S(theta)); requires exclusive access.
  const MeasurementMatrix& constrained_matrix();

 private:
  Index block_size_ = 0;
  double alpha_ = 1.0;
  RowMatrixXd theta_;
  std::optional<ConstrainedMatrix> cached_;
  std::vector<bool> flags_;
};

inline const MeasurementMatrix& constrained_matrix(SamplingLayerState& state) {
  return state.constrained_matrix();
}

// floor(ratio * B^2); throws ValidationError when that is zero.
Index measurement_dim(double sampling_ratio, Index block_size);

// Kernels [n_b, 1, B, B] sharing the matrix's row-major memory layout.
Tensor phi_kernels(const MeasurementMatrix& phi);
ConvSpec sampling_conv_spec(const MeasurementMatrix& phi);

// Block measurements [N, n_b, H/B, W/B]. Gaussian noise is added when
// noise_sigma > 0, drawn from the "noise" stream of rng_seed.
Tensor sample_image(const Tensor& image, const MeasurementMatrix& phi, double noise_sigma = 0.0,
                    std::uint64_t rng_seed = 0);

}  // namespace dsmm

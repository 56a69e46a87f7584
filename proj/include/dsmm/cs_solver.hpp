#pragma once

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "dsmm/sampling.hpp"
#include "dsmm/tensor.hpp"

namespace dsmm {

// l1 regularized block recovery in the orthonormal 2-D DCT domain:
//   min_x 1/2 ||Phi x - y||^2 + lambda ||dct2(x)||_1
struct SolverConfig {
  double lambda = 0.01;
  int max_iters = 500;
  double rel_tol = 1e-6;
  bool accelerated = true;  // FISTA; plain ISTA otherwise
  int lipschitz_iters = 100;

  void validate() const;
};

// Orthonormal DCT-II basis, row k = k-th cosine.
template <typename Scalar = double>
RowMatrix<Scalar> dct_matrix(Index n) {
  RowMatrix<Scalar> c(n, n);
  const Scalar pi = Scalar(3.141592653589793238462643383279502884L);
  for (Index k = 0; k < n; ++k) {
    const Scalar scale = std::sqrt((k == 0 ? Scalar(1) : Scalar(2)) / Scalar(n));
    for (Index i = 0; i < n; ++i)
      c(k, i) = scale * std::cos(pi * Scalar(2 * i + 1) * Scalar(k) / Scalar(2 * n));
  }
  return c;
}

template <typename Derived>
RowMatrix<typename Derived::Scalar> dct2(const Eigen::MatrixBase<Derived>& block) {
  if (block.rows() != block.cols()) throw DimensionError("block", "dct2 expects a square block");
  const auto c = dct_matrix<typename Derived::Scalar>(block.rows());
  return c * block * c.transpose();
}

template <typename Derived>
RowMatrix<typename Derived::Scalar> idct2(const Eigen::MatrixBase<Derived>& coeffs) {
  if (coeffs.rows() != coeffs.cols()) throw DimensionError("block", "idct2 expects a square block");
  const auto c = dct_matrix<typename Derived::Scalar>(coeffs.rows());
  return c.transpose() * coeffs * c;
}

// sign(v) * max(|v| - t, 0), elementwise.
template <typename Derived>
typename Derived::PlainObject soft_threshold(const Eigen::MatrixBase<Derived>& v,
                                             typename Derived::Scalar t) {
  if (t < 0) throw ValidationError("soft_threshold: threshold must be >= 0");
  using Scalar = typename Derived::Scalar;
  return v.unaryExpr([t](Scalar x) {
    const Scalar mag = std::abs(x) - t;
    return mag > Scalar(0) ? std::copysign(mag, x) : Scalar(0);
  });
}

// Largest eigenvalue of Phi^T Phi by power iteration from a fixed start.
double lipschitz(const MeasurementMatrix& phi, int iters);

class IstaSolver {
 public:
  IstaSolver(MeasurementMatrix phi, SolverConfig cfg);

  // Starts from Phi^T y unless `start` is given. When `objective_trace` is
  // non-null it receives the objective at the start point and after every
  // iteration.
  Eigen::VectorXd solve(const Eigen::VectorXd& y, const Eigen::VectorXd* start = nullptr,
                        std::vector<double>* objective_trace = nullptr) const;

  double objective(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;
  double step_lipschitz() const { return lipschitz_; }
  const MeasurementMatrix& matrix() const { return phi_; }

 private:
  Eigen::VectorXd prox(const Eigen::VectorXd& u, double threshold) const;

  MeasurementMatrix phi_;
  SolverConfig cfg_;
  RowMatrixXd dct_;
  double lipschitz_ = 0.0;
};

Eigen::VectorXd ista_block(const Eigen::VectorXd& y, const MeasurementMatrix& phi,
                           const SolverConfig& cfg);

// Independent per-block solves of [1, n_b, h, w] measurements, reassembled
// with the reshape+concat layout into [1, 1, h*B, w*B].
Tensor reconstruct_image(const Tensor& measurements, const MeasurementMatrix& phi,
                         const SolverConfig& cfg);

}  // namespace dsmm

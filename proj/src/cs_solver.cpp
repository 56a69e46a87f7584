#include "dsmm/cs_solver.hpp"

#include <limits>

#include "dsmm/parallel.hpp"
#include "dsmm/random.hpp"
#include "dsmm/reconstruction.hpp"

namespace dsmm {
namespace {

constexpr double kDegenerateLipschitz = 1e-12;

}  // namespace

void SolverConfig::validate() const {
  if (!(lambda > 0.0)) throw ValidationError("lambda: must be > 0");
  if (max_iters < 1) throw ValidationError("max_iters: must be >= 1");
  if (!(rel_tol > 0.0)) throw ValidationError("rel_tol: must be > 0");
  if (lipschitz_iters < 1) throw ValidationError("lipschitz_iters: must be >= 1");
}

double lipschitz(const MeasurementMatrix& phi, int iters) {
  if (iters < 1) throw ValidationError("lipschitz: iters must be >= 1");
  Rng rng(0x6c697073ULL);
  Eigen::VectorXd v(phi.n_B());
  fill_normal(v, rng, 1.0);
  v.normalize();
  double lambda = 0.0;
  for (int i = 0; i < iters; ++i) {
    const Eigen::VectorXd w = phi.entries.transpose() * (phi.entries * v);
    lambda = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
  }
  return std::max(lambda, 0.0);
}

IstaSolver::IstaSolver(MeasurementMatrix phi, SolverConfig cfg)
    : phi_(std::move(phi)), cfg_(cfg) {
  phi_.validate();
  cfg_.validate();
  dct_ = dct_matrix(phi_.block_size);
  lipschitz_ = lipschitz(phi_, cfg_.lipschitz_iters);
  if (!(lipschitz_ > kDegenerateLipschitz)) throw ValidationError("degenerate operator");
}

Eigen::VectorXd IstaSolver::prox(const Eigen::VectorXd& u, double threshold) const {
  const Index B = phi_.block_size;
  const Eigen::Map<const RowMatrixXd> block(u.data(), B, B);
  const RowMatrixXd coeffs = soft_threshold(RowMatrixXd(dct_ * block * dct_.transpose()), threshold);
  const RowMatrixXd out = dct_.transpose() * coeffs * dct_;
  return Eigen::Map<const Eigen::VectorXd>(out.data(), out.size());
}

double IstaSolver::objective(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
  const Index B = phi_.block_size;
  const Eigen::Map<const RowMatrixXd> block(x.data(), B, B);
  const double fidelity = 0.5 * (phi_.entries * x - y).squaredNorm();
  return fidelity + cfg_.lambda * (dct_ * block * dct_.transpose()).cwiseAbs().sum();
}

Eigen::VectorXd IstaSolver::solve(const Eigen::VectorXd& y, const Eigen::VectorXd* start,
                                  std::vector<double>* objective_trace) const {
  if (y.size() != phi_.n_b())
    throw DimensionError("measurements", "expected " + std::to_string(phi_.n_b()) +
                                             " measurements, got " + std::to_string(y.size()));
  const RowMatrixXd& A = phi_.entries;
  const double step = 1.0 / lipschitz_;
  const double threshold = cfg_.lambda * step;

  Eigen::VectorXd x = start ? *start : Eigen::VectorXd(A.transpose() * y);
  if (x.size() != phi_.n_B()) throw DimensionError("start", "start point has wrong length");
  Eigen::VectorXd z = x;
  double t = 1.0;
  if (objective_trace) objective_trace->push_back(objective(x, y));

  for (int it = 0; it < cfg_.max_iters; ++it) {
    const Eigen::VectorXd u = z - step * (A.transpose() * (A * z - y));
    Eigen::VectorXd next = prox(u, threshold);
    if (objective_trace) objective_trace->push_back(objective(next, y));
    const double change = (next - x).norm();
    const double scale = std::max(x.norm(), std::numeric_limits<double>::min());
    if (cfg_.accelerated) {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      z = next + ((t - 1.0) / t_next) * (next - x);
      t = t_next;
    } else {
      z = next;
    }
    x = std::move(next);
    if (change < cfg_.rel_tol * scale) break;
  }
  return x;
}

Eigen::VectorXd ista_block(const Eigen::VectorXd& y, const MeasurementMatrix& phi,
                           const SolverConfig& cfg) {
  return IstaSolver(phi, cfg).solve(y);
}

Tensor reconstruct_image(const Tensor& measurements, const MeasurementMatrix& phi,
                         const SolverConfig& cfg) {
  if (measurements.rank() != 4 || measurements.dim(0) != 1 || measurements.dim(1) != phi.n_b())
    throw DimensionError("channels", "measurements " + shape_string(measurements.shape()) +
                                         " do not match n_b=" + std::to_string(phi.n_b()));
  const IstaSolver solver(phi, cfg);
  const Index h = measurements.dim(2), w = measurements.dim(3);
  Tensor blocks({1, phi.n_B(), h, w});
  parallel_for(h * w, [&](Index pos) {
    const Index i = pos / w, j = pos % w;
    Eigen::VectorXd y(phi.n_b());
    for (Index k = 0; k < phi.n_b(); ++k) y[k] = measurements(0, k, i, j);
    const Eigen::VectorXd x = solver.solve(y);
    for (Index k = 0; k < phi.n_B(); ++k) blocks(0, k, i, j) = x[k];
  });
  return reshape_concat(blocks, phi.block_size);
}

}  // namespace dsmm

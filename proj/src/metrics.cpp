#include "dsmm/metrics.hpp"

namespace dsmm {
namespace {

// Separable "valid" filtering with the same kernel along both axes.
RowMatrixXd filter_valid(const RowMatrixXd& img, const Eigen::VectorXd& k) {
  const Index n = k.size();
  const Index out_r = img.rows() - n + 1, out_c = img.cols() - n + 1;
  RowMatrixXd horiz(img.rows(), out_c);
  for (Index r = 0; r < img.rows(); ++r)
    for (Index c = 0; c < out_c; ++c) horiz(r, c) = img.row(r).segment(c, n).dot(k.transpose());
  RowMatrixXd out(out_r, out_c);
  for (Index r = 0; r < out_r; ++r)
    for (Index c = 0; c < out_c; ++c) out(r, c) = horiz.col(c).segment(r, n).dot(k);
  return out;
}

}  // namespace

Eigen::VectorXd gaussian_window(const SsimParams& params) {
  Eigen::VectorXd w(params.window);
  const double centre = 0.5 * static_cast<double>(params.window - 1);
  for (Index i = 0; i < w.size(); ++i) {
    const double d = static_cast<double>(i) - centre;
    w[i] = std::exp(-d * d / (2.0 * params.sigma * params.sigma));
  }
  return w / w.sum();
}

double ssim(const RowMatrixXd& a, const RowMatrixXd& b, const SsimParams& params) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("image", "ssim: image shapes differ");
  if (a.rows() < params.window || a.cols() < params.window)
    throw ValidationError("ssim: image smaller than " + std::to_string(params.window) + "x" +
                          std::to_string(params.window) + " window");
  const Eigen::VectorXd k = gaussian_window(params);
  const double c1 = std::pow(params.k1 * params.dynamic_range, 2);
  const double c2 = std::pow(params.k2 * params.dynamic_range, 2);

  const RowMatrixXd mu_a = filter_valid(a, k);
  const RowMatrixXd mu_b = filter_valid(b, k);
  const RowMatrixXd aa = filter_valid(a.cwiseProduct(a), k);
  const RowMatrixXd bb = filter_valid(b.cwiseProduct(b), k);
  const RowMatrixXd ab = filter_valid(a.cwiseProduct(b), k);

  const auto ma = mu_a.array(), mb = mu_b.array();
  const auto var_a = aa.array() - ma * ma;
  const auto var_b = bb.array() - mb * mb;
  const auto cov = ab.array() - ma * mb;
  const Eigen::ArrayXXd map = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                              ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
  return map.mean();
}

}  // namespace dsmm

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>

#include "dsmm/error.hpp"
#include "dsmm/tensor.hpp"

namespace dsmm {

// Peak signal-to-noise ratio for images on [0,1]; +inf for identical inputs.
template <typename A, typename B>
double psnr(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("image", "psnr: image shapes differ");
  // Compensated (Neumaier) sum of squared differences, so a uniform error
  // gives its exact PSNR regardless of image size.
  double sum = 0.0, carry = 0.0;
  for (Index r = 0; r < a.rows(); ++r)
    for (Index c = 0; c < a.cols(); ++c) {
      const double d = static_cast<double>(a(r, c)) - static_cast<double>(b(r, c));
      const double sq = d * d, t = sum + sq;
      carry += std::abs(sum) >= sq ? (sum - t) + sq : (sq - t) + sum;
      sum = t;
    }
  const double mse = (sum + carry) / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  // 10 log10(1/mse), taken through the RMSE: the square root halves the
  // relative rounding of mse.
  return -20.0 * std::log10(std::sqrt(mse));
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Normalized Gaussian weights of length params.window.
Eigen::VectorXd gaussian_window(const SsimParams& params = {});

// Mean SSIM over every fully contained window position.
double ssim(const RowMatrixXd& a, const RowMatrixXd& b, const SsimParams& params = {});

}  // namespace dsmm

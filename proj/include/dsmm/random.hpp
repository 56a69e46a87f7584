#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace dsmm {

using Rng = std::mt19937_64;

// Mixes a user seed, a stream name ("init", "augment", "noise", "grm", ...)
// and optional integer keys into an independent generator seed, so each
// component can be replayed on its own.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                          std::initializer_list<std::uint64_t> keys = {});

inline Rng make_rng(std::uint64_t seed, std::string_view stream,
                    std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(derive_seed(seed, stream, keys));
}

template <typename Derived>
void fill_normal(Eigen::DenseBase<Derived>& dst, Rng& rng, typename Derived::Scalar stddev) {
  std::normal_distribution<typename Derived::Scalar> dist(0, stddev);
  for (Eigen::Index i = 0; i < dst.rows(); ++i)
    for (Eigen::Index j = 0; j < dst.cols(); ++j) dst(i, j) = dist(rng);
}

}  // namespace dsmm

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <numbers>

#include "hearx/error.hpp"

namespace hearx::dsp {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Square root of the periodic Hann window: w[i] = sqrt(0.5 - 0.5 cos(2 pi i / win)).
template <typename Scalar = double>
VectorX<Scalar> sqrt_hann(Eigen::Index win) {
  require(win >= 2 && win % 2 == 0, Errc::invalid_config, "sqrt_hann: window length must be even and >= 2");
  VectorX<Scalar> w(win);
  const double step = 2.0 * std::numbers::pi / static_cast<double>(win);
  for (Eigen::Index i = 0; i < win; ++i) {
    const double hann = 0.5 - 0.5 * std::cos(step * static_cast<double>(i));
    w[i] = static_cast<Scalar>(std::sqrt(std::max(hann, 0.0)));
  }
  return w;
}

/// Sum of squared window shifts at sample i of one period. Constant for a COLA pair.
template <typename Derived>
typename Derived::Scalar overlap_sum(const Eigen::MatrixBase<Derived>& w, Eigen::Index hop, Eigen::Index i) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index win = w.size();
  Scalar acc(0);
  for (Eigen::Index pos = i % hop; pos < win; pos += hop) acc += w[pos] * w[pos];
  return acc;
}

}  // namespace hearx::dsp

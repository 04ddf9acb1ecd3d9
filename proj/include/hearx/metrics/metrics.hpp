#pragma once

#include <Eigen/Core>
#include <vector>

#include "hearx/error.hpp"

namespace hearx::metrics {

using Eigen::Index;

inline constexpr double kSiSdrCap = 60.0;

/// Scale-invariant SDR in dB, clamped to +-60. An all-zero estimate scores -60.
double si_sdr(const Eigen::Ref<const Eigen::VectorXd>& est, const Eigen::Ref<const Eigen::VectorXd>& ref);
/// si_sdr(est, ref) - si_sdr(mixture, ref).
double si_sdri(const Eigen::Ref<const Eigen::VectorXd>& est, const Eigen::Ref<const Eigen::VectorXd>& mixture,
               const Eigen::Ref<const Eigen::VectorXd>& ref);

struct LossConfig {
  std::vector<Index> resolutions = {512, 1024, 2048, 256, 128};  // window lengths; hop = window / 2
};

/// Magnitude STFT with a sqrt-Hann window of length `win`, hop win/2, frames
/// starting at m * hop and zero-padded past the end. Returns frames x (win/2 + 1).
Eigen::MatrixXd magnitude_stft(const Eigen::Ref<const Eigen::VectorXd>& x, Index win);

/// Optimal non-negative scale a* = max(0, <est, ref>) / |est|^2 (0 for a silent estimate).
double optimal_scale(const Eigen::Ref<const Eigen::VectorXd>& est, const Eigen::Ref<const Eigen::VectorXd>& ref);

/// |a* est - ref|_1 / |ref|_1 + sum_r | |STFT_r(a* est)| - |STFT_r(ref)| |_1 / |STFT_r(ref)|_1.
double multires_si_loss(const Eigen::Ref<const Eigen::VectorXd>& est, const Eigen::Ref<const Eigen::VectorXd>& ref,
                        const LossConfig& cfg = {});

/// Delay-compensated filtering: y[n] = sum_m h[m] x[n + delay - m], same length as x.
Eigen::VectorXd filter_same(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::VectorXd& fir, Index delay);

/// Loss between NAL-R-fitted estimate and reference (filter delay removed).
double fitted_loss(const Eigen::Ref<const Eigen::VectorXd>& est, const Eigen::Ref<const Eigen::VectorXd>& ref,
                   const Eigen::VectorXd& fir, const LossConfig& cfg = {});

}  // namespace hearx::metrics

#include "hearx/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "hearx/dsp/stft.hpp"

namespace hearx::metrics {

namespace {

void check_pair(const Eigen::Ref<const Eigen::VectorXd>& est, const Eigen::Ref<const Eigen::VectorXd>& ref) {
  require(est.size() == ref.size() && ref.size() >= 1, Errc::invalid_input,
          "metrics: estimate and reference must have equal non-zero length");
  require(est.allFinite() && ref.allFinite(), Errc::invalid_input, "metrics: non-finite samples");
  require(ref.squaredNorm() > 0, Errc::undefined_reference, "metrics: reference is all zero");
}

}  // namespace

double si_sdr(const Eigen::Ref<const Eigen::VectorXd>& est, const Eigen::Ref<const Eigen::VectorXd>& ref) {
  check_pair(est, ref);
  const Eigen::VectorXd target = (est.dot(ref) / ref.squaredNorm()) * ref;
  const double signal = target.squaredNorm();
  const double noise = (est - target).squaredNorm();
  if (signal == 0.0) return -kSiSdrCap;
  if (noise == 0.0) return kSiSdrCap;
  return std::clamp(10.0 * std::log10(signal / noise), -kSiSdrCap, kSiSdrCap);
}

double si_sdri(const Eigen::Ref<const Eigen::VectorXd>& est, const Eigen::Ref<const Eigen::VectorXd>& mixture,
               const Eigen::Ref<const Eigen::VectorXd>& ref) {
  return si_sdr(est, ref) - si_sdr(mixture, ref);
}

Eigen::MatrixXd magnitude_stft(const Eigen::Ref<const Eigen::VectorXd>& x, Index win) {
  const Index hop = win / 2;
  require(win >= 2 && win % 2 == 0, Errc::invalid_config, "magnitude_stft: window must be even");
  const Index len = x.size();
  const Index frames = 1 + (std::max<Index>(0, len - win) + hop - 1) / hop;
  const auto window = dsp::sqrt_hann<double>(win);
  dsp::RealFft<double> fft(win);
  std::vector<double> buf(static_cast<size_t>(win));
  dsp::ComplexVector<double> spec(win / 2 + 1);
  Eigen::MatrixXd out(frames, win / 2 + 1);
  for (Index m = 0; m < frames; ++m) {
    for (Index i = 0; i < win; ++i) {
      const Index n = m * hop + i;
      buf[static_cast<size_t>(i)] = n < len ? x[n] * window[i] : 0.0;
    }
    fft.forward(buf.data(), spec.data());
    out.row(m) = spec.cwiseAbs().transpose();
  }
  return out;
}

double optimal_scale(const Eigen::Ref<const Eigen::VectorXd>& est, const Eigen::Ref<const Eigen::VectorXd>& ref) {
  const double energy = est.squaredNorm();
  return energy > 0 ? std::max(0.0, est.dot(ref)) / energy : 0.0;
}

double multires_si_loss(const Eigen::Ref<const Eigen::VectorXd>& est, const Eigen::Ref<const Eigen::VectorXd>& ref,
                        const LossConfig& cfg) {
  check_pair(est, ref);
  const Eigen::VectorXd scaled = optimal_scale(est, ref) * est;
  double loss = (scaled - ref).lpNorm<1>() / ref.lpNorm<1>();
  for (Index win : cfg.resolutions) {
    const Eigen::MatrixXd a = magnitude_stft(scaled, win);
    const Eigen::MatrixXd b = magnitude_stft(ref, win);
    loss += (a - b).cwiseAbs().sum() / b.sum();
  }
  return loss;
}

Eigen::VectorXd filter_same(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::VectorXd& fir, Index delay) {
  const Index n = x.size();
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  for (Index i = 0; i < n; ++i) {
    double acc = 0.0;
    for (Index m = 0; m < fir.size(); ++m) {
      const Index j = i + delay - m;
      if (j >= 0 && j < n) acc += fir[m] * x[j];
    }
    y[i] = acc;
  }
  return y;
}

double fitted_loss(const Eigen::Ref<const Eigen::VectorXd>& est, const Eigen::Ref<const Eigen::VectorXd>& ref,
                   const Eigen::VectorXd& fir, const LossConfig& cfg) {
  check_pair(est, ref);
  const Index delay = fir.size() / 2;
  return multires_si_loss(filter_same(est, fir, delay), filter_same(ref, fir, delay), cfg);
}

}  // namespace hearx::metrics

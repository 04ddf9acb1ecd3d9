#include "hearx/pipeline/scene.hpp"

#include <cmath>
#include <numbers>

#include "hearx/nn/rng.hpp"

namespace hearx::pipeline {

using nn::SplitMix64;

void SceneSpec::validate() const {
  require(channels >= 1, Errc::invalid_config, "scene: need at least one channel");
  require(duration_s > 0 && sample_rate > 0, Errc::invalid_config, "scene: duration and rate must be positive");
  require(!std::isnan(snr_db) && snr_db > -std::numeric_limits<double>::infinity(), Errc::invalid_config,
          "scene: SNR must be a finite number or +inf");
  require(rir_length >= 0 && rir_length <= 2048, Errc::invalid_config, "scene: RIR length must be in [0, 2048]");
  require(delays.empty() || static_cast<Index>(delays.size()) == channels, Errc::invalid_config,
          "scene: one delay per channel");
  require(gains.empty() || static_cast<Index>(gains.size()) == channels, Errc::invalid_config,
          "scene: one gain per channel");
  for (Index d : delays) require(d >= 0, Errc::invalid_config, "scene: delays must be non-negative");
}

Eigen::VectorXd speech_like(Index samples, double sample_rate, std::uint64_t seed) {
  SplitMix64 rng(seed);
  const double f0_base = rng.uniform(110.0, 200.0);
  const double vibrato = rng.uniform(2.0, 5.0);
  const double syllable_rate = rng.uniform(3.0, 5.0);
  const int harmonics = 20;
  std::vector<double> amp(harmonics), phase(harmonics);
  for (int h = 0; h < harmonics; ++h) {
    amp[static_cast<size_t>(h)] = rng.uniform(0.5, 1.0) / (h + 1);
    phase[static_cast<size_t>(h)] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  Eigen::VectorXd x(samples);
  double theta = 0.0;
  for (Index n = 0; n < samples; ++n) {
    const double t = static_cast<double>(n) / sample_rate;
    const double f0 = f0_base * (1.0 + 0.1 * std::sin(2.0 * std::numbers::pi * vibrato * t));
    theta += 2.0 * std::numbers::pi * f0 / sample_rate;
    double v = 0.0;
    for (int h = 0; h < harmonics; ++h) {
      if (f0 * (h + 1) >= 0.45 * sample_rate) break;
      v += amp[static_cast<size_t>(h)] * std::sin((h + 1) * theta + phase[static_cast<size_t>(h)]);
    }
    const double envelope = 0.55 + 0.45 * std::sin(2.0 * std::numbers::pi * syllable_rate * t);
    x[n] = 0.1 * envelope * v;
  }
  return x;
}

namespace {

Eigen::VectorXd delay_and_convolve(const Eigen::VectorXd& x, Index delay, double gain, const Eigen::VectorXd& rir) {
  const Index n = x.size();
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  for (Index m = 0; m < rir.size(); ++m) {
    if (rir[m] == 0.0) continue;
    const Index shift = delay + m;
    if (shift >= n) break;
    y.tail(n - shift) += gain * rir[m] * x.head(n - shift);
  }
  return y;
}

Eigen::VectorXd make_rir(Index length, SplitMix64& rng) {
  if (length <= 1) return Eigen::VectorXd::Ones(1);
  Eigen::VectorXd h(length);
  h[0] = 1.0;
  const double decay = static_cast<double>(length) / 6.0;  // about 52 dB over the tail
  for (Index m = 1; m < length; ++m) h[m] = 0.3 * rng.normal() * std::exp(-static_cast<double>(m) / decay);
  return h;
}

}  // namespace

Scene simulate_scene(const SceneSpec& spec) {
  spec.validate();
  const Index n = static_cast<Index>(std::llround(spec.duration_s * spec.sample_rate));
  const Index c = spec.channels;
  SplitMix64 rng(spec.seed);

  Scene scene;
  scene.anechoic_target = speech_like(n, spec.sample_rate, rng.next());
  scene.target_image.resize(n, c);
  for (Index ch = 0; ch < c; ++ch) {
    const Index delay = spec.delays.empty() ? (ch == 0 ? 0 : static_cast<Index>(rng.next() % 9))
                                            : spec.delays[static_cast<size_t>(ch)];
    const double gain = spec.gains.empty() ? (ch == 0 ? 1.0 : rng.uniform(0.6, 1.0)) : spec.gains[static_cast<size_t>(ch)];
    const Eigen::VectorXd rir = make_rir(spec.rir_length, rng);
    scene.target_image.col(ch) = delay_and_convolve(scene.anechoic_target, delay, gain, rir);
  }
  scene.target_ref = scene.target_image.col(0);

  dsp::SignalMatrix<double> noise = dsp::SignalMatrix<double>::Zero(n, c);
  if (std::isfinite(spec.snr_db)) {
    if (spec.interferer == Interferer::white_noise) {
      for (Index ch = 0; ch < c; ++ch)
        for (Index i = 0; i < n; ++i) noise(i, ch) = rng.normal();
    } else {
      // Linear sweep 200 Hz -> 4 kHz from a second direction.
      Eigen::VectorXd sweep(n);
      const double f_lo = 200.0, f_hi = 4000.0, dur = static_cast<double>(n) / spec.sample_rate;
      for (Index i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / spec.sample_rate;
        sweep[i] = std::sin(2.0 * std::numbers::pi * (f_lo * t + 0.5 * (f_hi - f_lo) / dur * t * t));
      }
      for (Index ch = 0; ch < c; ++ch) {
        const Index delay = static_cast<Index>(rng.next() % 9);
        noise.col(ch) = delay_and_convolve(sweep, delay, rng.uniform(0.6, 1.0), Eigen::VectorXd::Ones(1));
      }
    }
    const double target_energy = scene.target_ref.squaredNorm();
    const double noise_energy = noise.col(0).squaredNorm();
    if (noise_energy > 0) {
      noise *= std::sqrt(target_energy / (noise_energy * std::pow(10.0, spec.snr_db / 10.0)));
    }
  }
  scene.interferer_ref = noise.col(0);
  scene.mixture = scene.target_image + noise;
  return scene;
}

}  // namespace hearx::pipeline

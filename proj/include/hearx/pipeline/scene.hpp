#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "hearx/dsp/stft.hpp"

namespace hearx::pipeline {

using Eigen::Index;

enum class Interferer { white_noise, tonal_sweep };

/// Deterministic synthetic multi-channel scene.
struct SceneSpec {
  std::uint64_t seed = 1;
  Index channels = 6;
  double duration_s = 1.0;
  double sample_rate = 32000.0;
  double snr_db = 0.0;  // at the reference channel; +inf disables the interferer
  Interferer interferer = Interferer::white_noise;
  Index rir_length = 0;  // 0: anechoic, otherwise exponentially decaying noise tail (<= 2048)
  std::vector<Index> delays;  // per channel, samples; empty: seeded 0..8 (channel 0 undelayed)
  std::vector<double> gains;  // per channel; empty: seeded 0.6..1 (channel 0 unity)

  void validate() const;
};

struct Scene {
  dsp::SignalMatrix<double> mixture;       // samples x channels
  dsp::SignalMatrix<double> target_image;  // target as received at each channel
  Eigen::VectorXd target_ref;              // target image at the reference channel
  Eigen::VectorXd anechoic_target;         // dry source
  Eigen::VectorXd interferer_ref;          // interferer at the reference channel
};

/// Harmonic, syllable-modulated speech-like source.
Eigen::VectorXd speech_like(Index samples, double sample_rate, std::uint64_t seed);

Scene simulate_scene(const SceneSpec& spec);

}  // namespace hearx::pipeline

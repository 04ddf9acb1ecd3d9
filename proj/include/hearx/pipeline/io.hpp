#pragma once

#include <filesystem>
#include <string>

#include "hearx/dsp/stft.hpp"
#include "hearx/fitting/fitting.hpp"

namespace hearx::pipeline {

enum class SampleFormat { float32, int16 };

struct Wav {
  double sample_rate = 32000.0;
  dsp::SignalMatrix<double> samples;  // samples x channels, full scale +-1
};

/// Reads RIFF/WAVE PCM int16 or IEEE float32 (plain or extensible header).
Wav read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Wav& wav, SampleFormat format = SampleFormat::float32);

struct Listener {
  fitting::Audiogram left, right;
};

/// Parses a listener record with `audiogram_cfs`, `audiogram_levels_l` and `audiogram_levels_r`.
Listener parse_listener(const std::string& json_text);
Listener read_listener(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);

}  // namespace hearx::pipeline

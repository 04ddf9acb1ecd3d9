#pragma once

#include <Eigen/Core>
#include <array>
#include <complex>
#include <vector>

#include "hearx/dsp/stft.hpp"

namespace hearx::fitting {

using Eigen::Index;

/// Audiometric catalogue frequencies (Hz).
inline constexpr std::array<double, 8> kCatalogue = {250, 500, 1000, 2000, 3000, 4000, 6000, 8000};

/// NAL-R frequency-dependent correction k(f) in dB at a catalogue frequency.
double nalr_correction(double cf);

/// Hearing levels for one ear.
struct Audiogram {
  std::vector<double> cfs;     // Hz, strictly increasing, subset of the catalogue
  std::vector<double> levels;  // dB HL in [-10, 120]

  static Audiogram flat(double level);
  void validate() const;
  /// Level at a catalogue frequency, interpolated linearly over log-frequency
  /// (and held at the ends) when the audiogram omits it.
  double level_at(double cf) const;
};

/// Insertion gains IG(f) = X + 0.31 HTL(f) + k(f), X = 0.05 (HTL500 + HTL1000 + HTL2000),
/// evaluated at every catalogue frequency. `clamp_negative` floors them at 0 dB.
std::vector<double> nalr_gains(const Audiogram& audiogram, bool clamp_negative = false);

inline constexpr Index kFirTaps = 80;

/// Integer group delay of designed filters.
constexpr Index fir_delay(Index taps) { return taps / 2; }

/// Linear-phase FIR with `taps` taps (even) whose amplitude response passes
/// exactly through the catalogue gains and fits, in least squares, the dB
/// gain curve interpolated over log-frequency on the 257-bin grid. The
/// impulse response is symmetric about taps/2; tap 0 is zero.
Eigen::VectorXd design_fir(const std::vector<double>& gains_db, Index taps = kFirTaps, double sample_rate = 32000.0);

/// Amplitude response (dB) of a filter at frequency `hz`.
double fir_response_db(const Eigen::VectorXd& fir, double hz, double sample_rate = 32000.0);

struct NalrPrescription {
  std::vector<double> gains;  // dB at kCatalogue
  Eigen::VectorXd fir;        // kFirTaps taps

  /// An audiogram without hearing loss (no level above 0 dB HL) maps to the
  /// pure delay filter.
  static NalrPrescription from_audiogram(const Audiogram& audiogram, bool clamp_negative = false);
};

/// DFT (fft_size points) of the zero-padded taps, fft_size/2 + 1 bins. The
/// taps are first rotated circularly `advance` samples earlier; advancing a
/// linear-phase filter by its group delay leaves its amplitude response with
/// zero phase, which keeps the circular-convolution error small.
dsp::ComplexVector<double> fir_spectrum(const Eigen::VectorXd& fir, Index fft_size, Index advance = 0);

/// Multiplies each bin of a frame by the filter spectrum (circular-convolution
/// approximation of time-domain filtering).
void apply_fir_stft(Eigen::Ref<dsp::ComplexVector<double>> frame, const dsp::ComplexVector<double>& spectrum);

struct DrcConfig {
  double threshold_db = -40.0;
  double ratio = 1.2;
  double knee_db = 4.0;
  double attack_s = 0.05;
  double release_s = 0.2;
  double aux_level_db = -10.0;  // accepted and stored; does not affect the gain
  double hop_s = 0.004;

  void validate() const;
};

/// Static compression curve: gain in dB for an input level in dB.
double drc_static_gain(double level_db, const DrcConfig& cfg = {});

/// Frame-online broadband compressor on STFT frames.
class Drc {
 public:
  /// `window` is the analysis window; levels are reported as mean signal power.
  Drc(const DrcConfig& cfg, const Eigen::VectorXd& window);

  /// Level of a half-spectrum frame in dB (floor -120).
  double frame_level_db(const Eigen::Ref<const dsp::ComplexVector<double>>& frame) const;
  /// Updates the smoothed gain from this frame and applies it. Returns the gain in dB.
  double step(Eigen::Ref<dsp::ComplexVector<double>> frame);
  /// Same smoother driven directly by a level.
  double step_level(double level_db);

  double gain_db() const { return gain_db_; }
  double attack_coefficient() const { return attack_; }
  double release_coefficient() const { return release_; }

 private:
  DrcConfig cfg_;
  Index fft_size_;
  double window_energy_;
  double attack_, release_;
  double gain_db_ = 0.0;
};

/// NAL-R equalization followed by compression, one frame at a time. The
/// equalizer is applied with its group delay removed, so it adds no latency.
class FittingChain {
 public:
  FittingChain(const NalrPrescription& prescription, const DrcConfig& drc, const Eigen::VectorXd& window);
  void process(Eigen::Ref<dsp::ComplexVector<double>> frame);

 private:
  dsp::ComplexVector<double> spectrum_;
  Drc drc_;
};

}  // namespace hearx::fitting

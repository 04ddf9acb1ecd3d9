#include "hearx/fitting/fitting.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace hearx::fitting {

namespace {

constexpr double kMinLevel = -10.0, kMaxLevel = 120.0;

// Interpolates (log f, y) pairs linearly, holding the end values.
double interp_log(const std::vector<double>& f, const std::vector<double>& y, double x) {
  if (x <= f.front()) return y.front();
  if (x >= f.back()) return y.back();
  const auto it = std::upper_bound(f.begin(), f.end(), x);
  const auto i = static_cast<size_t>(it - f.begin());
  const double t = (std::log(x) - std::log(f[i - 1])) / (std::log(f[i]) - std::log(f[i - 1]));
  return y[i - 1] + t * (y[i] - y[i - 1]);
}

}  // namespace

double nalr_correction(double cf) {
  // 8000 Hz continues the flat high-frequency correction.
  static constexpr std::array<double, 8> k = {-17, -8, 1, -1, -2, -2, -2, -2};
  for (size_t i = 0; i < kCatalogue.size(); ++i)
    if (kCatalogue[i] == cf) return k[i];
  fail(Errc::invalid_audiogram, "nalr: " + std::to_string(cf) + " Hz is not a catalogue frequency");
}

Audiogram Audiogram::flat(double level) {
  return {std::vector<double>(kCatalogue.begin(), kCatalogue.end()), std::vector<double>(kCatalogue.size(), level)};
}

void Audiogram::validate() const {
  require(!cfs.empty() && cfs.size() == levels.size(), Errc::invalid_audiogram,
          "audiogram: frequency and level lists must be non-empty and of equal length");
  for (size_t i = 0; i < cfs.size(); ++i) {
    require(std::find(kCatalogue.begin(), kCatalogue.end(), cfs[i]) != kCatalogue.end(), Errc::invalid_audiogram,
            "audiogram: " + std::to_string(cfs[i]) + " Hz is not a catalogue frequency");
    require(i == 0 || cfs[i] > cfs[i - 1], Errc::invalid_audiogram, "audiogram: frequencies must be strictly increasing");
    require(std::isfinite(levels[i]) && levels[i] >= kMinLevel && levels[i] <= kMaxLevel, Errc::invalid_audiogram,
            "audiogram: levels must lie in [-10, 120] dB HL");
  }
  for (double needed : {500.0, 1000.0, 2000.0})
    require(std::find(cfs.begin(), cfs.end(), needed) != cfs.end(), Errc::invalid_audiogram,
            "audiogram: 500, 1000 and 2000 Hz are required");
}

double Audiogram::level_at(double cf) const { return interp_log(cfs, levels, cf); }

std::vector<double> nalr_gains(const Audiogram& audiogram, bool clamp_negative) {
  audiogram.validate();
  const double x = 0.05 * (audiogram.level_at(500) + audiogram.level_at(1000) + audiogram.level_at(2000));
  std::vector<double> gains;
  for (double cf : kCatalogue) {
    double g = x + 0.31 * audiogram.level_at(cf) + nalr_correction(cf);
    if (clamp_negative) g = std::max(g, 0.0);
    gains.push_back(g);
  }
  return gains;
}

Eigen::VectorXd design_fir(const std::vector<double>& gains_db, Index taps, double sample_rate) {
  require(gains_db.size() == kCatalogue.size(), Errc::invalid_input, "design_fir: need one gain per catalogue frequency");
  require(taps >= 4 && taps % 2 == 0, Errc::invalid_config, "design_fir: tap count must be even and >= 4");
  require(kCatalogue.back() < sample_rate / 2, Errc::invalid_config, "design_fir: catalogue exceeds Nyquist");
  for (double g : gains_db) require(std::isfinite(g), Errc::invalid_input, "design_fir: non-finite gain");

  // Amplitude A(w) = a0 + 2 sum_m a_m cos(w m), m = 1 .. delay - 1.
  const Index delay = fir_delay(taps), unknowns = delay;
  const std::vector<double> cf(kCatalogue.begin(), kCatalogue.end());
  auto basis_row = [&](double hz) {
    const double w = 2.0 * std::numbers::pi * hz / sample_rate;
    Eigen::RowVectorXd row(unknowns);
    row[0] = 1.0;
    for (Index m = 1; m < unknowns; ++m) row[m] = 2.0 * std::cos(w * static_cast<double>(m));
    return row;
  };

  constexpr Index kGrid = 257;
  Eigen::MatrixXd a(kGrid, unknowns);
  Eigen::VectorXd target(kGrid);
  for (Index k = 0; k < kGrid; ++k) {
    const double hz = 0.5 * sample_rate * static_cast<double>(k) / static_cast<double>(kGrid - 1);
    a.row(k) = basis_row(hz);
    target[k] = std::pow(10.0, interp_log(cf, gains_db, std::max(hz, cf.front())) / 20.0);
  }
  const Index nc = static_cast<Index>(cf.size());
  Eigen::MatrixXd c(nc, unknowns);
  Eigen::VectorXd d(nc);
  for (Index i = 0; i < nc; ++i) {
    c.row(i) = basis_row(cf[static_cast<size_t>(i)]);
    d[i] = std::pow(10.0, gains_db[static_cast<size_t>(i)] / 20.0);
  }

  // Equality-constrained least squares via the KKT system.
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(unknowns + nc, unknowns + nc);
  kkt.topLeftCorner(unknowns, unknowns) = 2.0 * a.transpose() * a;
  kkt.topRightCorner(unknowns, nc) = c.transpose();
  kkt.bottomLeftCorner(nc, unknowns) = c;
  Eigen::VectorXd rhs(unknowns + nc);
  rhs.head(unknowns) = 2.0 * a.transpose() * target;
  rhs.tail(nc) = d;
  const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);

  Eigen::VectorXd h = Eigen::VectorXd::Zero(taps);
  h[delay] = sol[0];
  for (Index m = 1; m < unknowns; ++m) h[delay - m] = h[delay + m] = sol[m];
  return h;
}

double fir_response_db(const Eigen::VectorXd& fir, double hz, double sample_rate) {
  const double w = 2.0 * std::numbers::pi * hz / sample_rate;
  std::complex<double> acc = 0.0;
  for (Index n = 0; n < fir.size(); ++n) acc += fir[n] * std::polar(1.0, -w * static_cast<double>(n));
  return 20.0 * std::log10(std::abs(acc));
}

NalrPrescription NalrPrescription::from_audiogram(const Audiogram& audiogram, bool clamp_negative) {
  NalrPrescription p;
  p.gains = nalr_gains(audiogram, clamp_negative);
  if (*std::max_element(audiogram.levels.begin(), audiogram.levels.end()) <= 0.0) {
    p.fir = Eigen::VectorXd::Zero(kFirTaps);
    p.fir[fir_delay(kFirTaps)] = 1.0;
  } else {
    p.fir = design_fir(p.gains);
  }
  return p;
}

dsp::ComplexVector<double> fir_spectrum(const Eigen::VectorXd& fir, Index fft_size, Index advance) {
  require(fir.size() <= fft_size, Errc::invalid_config, "fir_spectrum: filter longer than the FFT");
  require(advance >= 0 && advance < fft_size, Errc::invalid_config, "fir_spectrum: advance must lie in [0, fft_size)");
  std::vector<double> padded(static_cast<size_t>(fft_size), 0.0);
  for (Index k = 0; k < fir.size(); ++k) padded[static_cast<size_t>((k - advance + fft_size) % fft_size)] = fir[k];
  dsp::RealFft<double> fft(fft_size);
  dsp::ComplexVector<double> out(fft_size / 2 + 1);
  fft.forward(padded.data(), out.data());
  return out;
}

void apply_fir_stft(Eigen::Ref<dsp::ComplexVector<double>> frame, const dsp::ComplexVector<double>& spectrum) {
  require(frame.size() == spectrum.size(), Errc::invalid_shape, "apply_fir_stft: bin count mismatch");
  frame.array() *= spectrum.array();
}

void DrcConfig::validate() const {
  require(ratio >= 1.0, Errc::invalid_config, "drc: ratio must be >= 1");
  require(attack_s > 0 && release_s > 0 && hop_s > 0, Errc::invalid_config, "drc: time constants must be positive");
  require(knee_db >= 0, Errc::invalid_config, "drc: knee width must be non-negative");
}

double drc_static_gain(double level_db, const DrcConfig& cfg) {
  const double t = cfg.threshold_db, w = cfg.knee_db, r = cfg.ratio;
  if (level_db < t - w / 2) return 0.0;
  if (w > 0 && level_db <= t + w / 2) {
    const double x = level_db - t + w / 2;
    return (1.0 / r - 1.0) * x * x / (2.0 * w);
  }
  return (t + (level_db - t) / r) - level_db;
}

Drc::Drc(const DrcConfig& cfg, const Eigen::VectorXd& window)
    : cfg_(cfg), fft_size_(window.size()), window_energy_(window.squaredNorm()) {
  cfg_.validate();
  require(window_energy_ > 0, Errc::invalid_config, "drc: window has no energy");
  attack_ = std::exp(-cfg_.hop_s / cfg_.attack_s);
  release_ = std::exp(-cfg_.hop_s / cfg_.release_s);
}

double Drc::frame_level_db(const Eigen::Ref<const dsp::ComplexVector<double>>& frame) const {
  require(frame.size() == fft_size_ / 2 + 1, Errc::invalid_shape, "drc: bin count mismatch");
  // Parseval over the full spectrum, reconstructed from the half spectrum.
  double energy = std::norm(frame[0]) + std::norm(frame[frame.size() - 1]);
  for (Index k = 1; k + 1 < frame.size(); ++k) energy += 2.0 * std::norm(frame[k]);
  const double power = energy / (static_cast<double>(fft_size_) * window_energy_);
  return power > 0 ? std::max(10.0 * std::log10(power), -120.0) : -120.0;
}

double Drc::step_level(double level_db) {
  const double target = drc_static_gain(level_db, cfg_);
  const double a = target < gain_db_ ? attack_ : release_;
  gain_db_ = a * gain_db_ + (1.0 - a) * target;
  return gain_db_;
}

double Drc::step(Eigen::Ref<dsp::ComplexVector<double>> frame) {
  const double g = step_level(frame_level_db(frame));
  frame *= std::pow(10.0, g / 20.0);
  return g;
}

FittingChain::FittingChain(const NalrPrescription& prescription, const DrcConfig& drc, const Eigen::VectorXd& window)
    : spectrum_(fir_spectrum(prescription.fir, window.size(), fir_delay(prescription.fir.size()))), drc_(drc, window) {}

void FittingChain::process(Eigen::Ref<dsp::ComplexVector<double>> frame) {
  apply_fir_stft(frame, spectrum_);
  drc_.step(frame);
}

}  // namespace hearx::fitting

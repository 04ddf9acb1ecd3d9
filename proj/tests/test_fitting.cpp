#include "doctest.h"

#include <cmath>
#include <numbers>

#include "hearx/dsp/causality.hpp"
#include "hearx/fitting/fitting.hpp"
#include "hearx/nn/rng.hpp"

using namespace hearx;
using namespace hearx::fitting;

namespace {

constexpr double kFs = 32000.0;
const std::vector<double> kCorrections = {-17, -8, 1, -1, -2, -2, -2, -2};

Audiogram sloping() { return {{250, 500, 1000, 2000, 3000, 4000, 6000, 8000}, {15, 20, 30, 45, 55, 60, 65, 70}}; }

Eigen::VectorXd white_noise(Index n, std::uint64_t seed) {
  nn::SplitMix64 rng(seed);
  return Eigen::VectorXd::NullaryExpr(n, [&] { return rng.uniform(-1, 1); });
}

// Direct time-domain convolution, output aligned with the input start.
Eigen::VectorXd convolve(const Eigen::VectorXd& x, const Eigen::VectorXd& h) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size());
  for (Index n = 0; n < x.size(); ++n)
    for (Index k = 0; k < h.size() && k <= n; ++k) y[n] += h[k] * x[n - k];
  return y;
}

// Streams x through analysis, a per-frame operation and synthesis of the same
// frame index; the output trails the input by win - hop samples.
template <typename Op>
Eigen::VectorXd stft_process(const Eigen::VectorXd& x, Op op) {
  const dsp::StftConfig cfg;
  dsp::StreamingStft<double> stft(cfg, 1);
  Eigen::VectorXd y(x.size());
  for (Index k = 0; k * cfg.hop < x.size(); ++k) {
    dsp::ComplexVector<double> frame = stft.analyze_step(x.segment(k * cfg.hop, cfg.hop)).col(0);
    op(frame);
    y.segment(k * cfg.hop, cfg.hop) = stft.synthesize_step(frame, k);
  }
  return y;
}

double relative_rms(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_CASE("NAL-R corrections and prescription") {
  for (size_t i = 0; i < kCatalogue.size(); ++i) CHECK(nalr_correction(kCatalogue[i]) == kCorrections[i]);
  CHECK_THROWS_AS(nalr_correction(750), Error);

  // No hearing loss leaves only the frequency corrections.
  CHECK(nalr_gains(Audiogram::flat(0)) == kCorrections);

  const auto g40 = nalr_gains(Audiogram::flat(40));
  CHECK(g40[2] == doctest::Approx(19.4).epsilon(1e-12));
  for (size_t i = 0; i < kCatalogue.size(); ++i) CHECK(std::abs(g40[i] - (6.0 + 12.4 + kCorrections[i])) <= 0.01);

  // Removing the corrections leaves a linear function of the levels.
  const Audiogram a{{250, 500, 1000, 2000, 3000, 4000, 6000, 8000}, {5, 10, 15, 25, 30, 35, 40, 45}};
  Audiogram twice = a;
  for (double& l : twice.levels) l *= 2;
  const auto ga = nalr_gains(a), g2 = nalr_gains(twice);
  for (size_t i = 0; i < ga.size(); ++i)
    CHECK(g2[i] - kCorrections[i] == doctest::Approx(2 * (ga[i] - kCorrections[i])).epsilon(1e-12));

  // Negative gains are only floored on request.
  CHECK(nalr_gains(Audiogram::flat(0))[0] == -17);
  for (double g : nalr_gains(Audiogram::flat(0), true)) CHECK(g >= 0);
}

TEST_CASE("audiogram validation and interpolation") {
  for (double missing : {500.0, 1000.0, 2000.0}) {
    Audiogram a = Audiogram::flat(30);
    const auto it = std::find(a.cfs.begin(), a.cfs.end(), missing);
    a.levels.erase(a.levels.begin() + (it - a.cfs.begin()));
    a.cfs.erase(it);
    try {
      nalr_gains(a);
      FAIL("expected invalid audiogram");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::invalid_audiogram);
    }
  }
  Audiogram bad = Audiogram::flat(30);
  bad.levels[3] = 130;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = Audiogram::flat(30);
  bad.cfs[0] = 300;
  CHECK_THROWS_AS(bad.validate(), Error);

  // Missing catalogue points fall on the log-frequency line and are held at the ends.
  const Audiogram sparse{{500, 1000, 2000, 4000}, {10, 20, 40, 60}};
  CHECK(sparse.level_at(250) == 10);
  CHECK(sparse.level_at(8000) == 60);
  CHECK(sparse.level_at(3000) == doctest::Approx(40 + 20 * std::log2(1.5)));
}

TEST_CASE("equalizer design") {
  SUBCASE("zero gains give a delayed delta") {
    const Eigen::VectorXd h = design_fir(std::vector<double>(8, 0.0));
    CHECK(h.size() == kFirTaps);
    Index peak = 0;
    h.cwiseAbs().maxCoeff(&peak);
    CHECK(peak == fir_delay(kFirTaps));
    CHECK(h[peak] >= 0.99);
    for (Index i = 0; i < h.size(); ++i)
      if (i != peak) CHECK(std::abs(h[i]) <= 0.01);
  }
  SUBCASE("flat +6 dB scales the delta") {
    const Eigen::VectorXd h = design_fir(std::vector<double>(8, 6.0));
    CHECK(h[fir_delay(kFirTaps)] == doctest::Approx(std::pow(10.0, 6.0 / 20.0)).epsilon(1e-3));
  }
  SUBCASE("linear phase about the delay tap") {
    const Eigen::VectorXd h = design_fir(nalr_gains(sloping()));
    const Index d = fir_delay(kFirTaps);
    CHECK(h[0] == 0.0);
    for (Index i = 1; i < d; ++i) CHECK(h[d - i] == doctest::Approx(h[d + i]).epsilon(1e-12));
  }
  SUBCASE("response follows the prescription") {
    for (const Audiogram& a : {Audiogram::flat(40), sloping(), Audiogram{{500, 1000, 2000}, {30, 40, 50}}}) {
      const auto presc = NalrPrescription::from_audiogram(a);
      for (size_t i = 0; i < kCatalogue.size(); ++i)
        if (kCatalogue[i] >= 250 && kCatalogue[i] <= 6000)
          CHECK(std::abs(fir_response_db(presc.fir, kCatalogue[i], kFs) - presc.gains[i]) <= 1.0);
    }
  }
  SUBCASE("no hearing loss gives the pure delay") {
    const auto presc = NalrPrescription::from_audiogram(Audiogram::flat(-5));
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(kFirTaps);
    delta[fir_delay(kFirTaps)] = 1.0;
    CHECK(presc.fir == delta);
  }
}

TEST_CASE("STFT-domain equalization") {
  SUBCASE("delta filter leaves frames unchanged") {
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(kFirTaps);
    delta[0] = 1.0;
    const auto spectrum = fir_spectrum(delta, 512);
    nn::SplitMix64 rng(2);
    dsp::ComplexVector<double> frame(257), copy;
    for (auto& v : frame) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    copy = frame;
    apply_fir_stft(frame, spectrum);
    CHECK((frame - copy).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("matches time-domain convolution on white noise") {
    // With the group delay removed the chain output is the convolution
    // advanced by that delay, on top of the STFT's own delay.
    const Eigen::VectorXd x = white_noise(32000, 9);
    for (const Audiogram& a : {Audiogram::flat(40), sloping()}) {
      const auto presc = NalrPrescription::from_audiogram(a);
      const Index d = fir_delay(kFirTaps);
      const auto spectrum = fir_spectrum(presc.fir, 512, d);
      const Eigen::VectorXd y = stft_process(x, [&](auto& f) { apply_fir_stft(f, spectrum); });
      const Eigen::VectorXd ref = convolve(x, presc.fir);
      const Index offset = 384 - d, n = x.size() - offset - 1024;
      const double err = relative_rms(y.segment(offset + 512, n), ref.segment(512, n));
      MESSAGE("STFT vs convolution relative RMS: " << err);
      CHECK(err <= 0.02);
    }
  }
  SUBCASE("a pure delay delays a sinusoid") {
    const Index d = 7;
    Eigen::VectorXd h = Eigen::VectorXd::Zero(kFirTaps);
    h[d] = 1.0;
    const auto spectrum = fir_spectrum(h, 512);
    Eigen::VectorXd x(16000);
    for (Index n = 0; n < x.size(); ++n) x[n] = std::sin(2 * std::numbers::pi * 440.0 * static_cast<double>(n) / kFs);
    const Eigen::VectorXd y = stft_process(x, [&](auto& f) { apply_fir_stft(f, spectrum); });
    const Index offset = 384 + d, n = x.size() - offset - 1024;
    CHECK(relative_rms(y.segment(offset + 512, n), x.segment(512, n)) <= 0.01);
  }
  SUBCASE("advancing by the full delay cancels a pure delay") {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(kFirTaps);
    h[fir_delay(kFirTaps)] = 1.0;
    for (const auto& v : fir_spectrum(h, 512, fir_delay(kFirTaps))) CHECK(std::abs(v - 1.0) <= 1e-12);
    CHECK_THROWS_AS(fir_spectrum(h, 512, 512), Error);
  }
}

TEST_CASE("compressor static curve") {
  const DrcConfig cfg;
  CHECK(std::abs(drc_static_gain(-60, cfg)) <= 0.01);
  CHECK(drc_static_gain(-60, cfg) == 0.0);
  CHECK(drc_static_gain(-40, cfg) == doctest::Approx(-1.0 / 12.0).epsilon(1e-9));
  CHECK(std::abs(drc_static_gain(-20, cfg) - (-10.0 / 3.0)) <= 0.01);

  // Knee edges join continuously.
  for (double edge : {-42.0, -38.0}) {
    const double lo = drc_static_gain(std::nextafter(edge, -1e9), cfg), hi = drc_static_gain(std::nextafter(edge, 1e9), cfg);
    CHECK(std::abs(lo - hi) <= 1e-9);
    CHECK(std::abs(drc_static_gain(edge, cfg) - lo) <= 1e-9);
  }
  // Louder input never earns more gain, and output level never drops.
  double prev = drc_static_gain(-130, cfg);
  for (double l = -129.99; l <= 20; l += 0.01) {
    const double g = drc_static_gain(l, cfg);
    CHECK(g <= prev + 1e-12);
    CHECK(l + g >= (l - 0.01) + prev - 1e-12);
    prev = g;
  }
  DrcConfig bad;
  bad.ratio = 0.5;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("compressor dynamics") {
  const Eigen::VectorXd window = dsp::sqrt_hann<double>(512);
  Drc drc(DrcConfig{}, window);
  CHECK(drc.attack_coefficient() == doctest::Approx(0.9231).epsilon(1e-4));
  CHECK(drc.release_coefficient() == doctest::Approx(0.9802).epsilon(1e-4));

  SUBCASE("level detector reads mean signal power") {
    dsp::StreamingStft<double> stft(dsp::StftConfig{}, 1);
    const Eigen::VectorXd x = 0.1 * white_noise(4096, 3) * std::sqrt(3.0);  // power 0.01
    dsp::ComplexVector<double> frame;
    for (Index k = 0; k < 32; ++k) frame = stft.analyze_step(x.segment(k * 128, 128)).col(0);
    CHECK(std::abs(drc.frame_level_db(frame) + 20.0) <= 1.0);
    CHECK(drc.frame_level_db(dsp::ComplexVector<double>::Zero(257)) == -120.0);
  }
  SUBCASE("silence keeps unity gain") {
    for (int k = 0; k < 50; ++k) {
      dsp::ComplexVector<double> frame = dsp::ComplexVector<double>::Zero(257);
      CHECK(drc.step(frame) == 0.0);
    }
  }
  SUBCASE("attack time constant") {
    for (int k = 0; k < 100; ++k) drc.step_level(-60);
    const double target = drc_static_gain(-20);
    Index crossing = -1;
    for (Index k = 1; k <= 100 && crossing < 0; ++k)
      if (drc.step_level(-20) <= (1 - std::exp(-1.0)) * target) crossing = k;
    // 1 - a^n reaches 63.2 % at n = attack / hop = 12.5.
    CHECK(crossing >= 12);
    CHECK(crossing <= 13);
  }
  SUBCASE("release is slower than attack") {
    for (int k = 0; k < 300; ++k) drc.step_level(-20);
    const double g0 = drc.gain_db();
    drc.step_level(-60);
    CHECK(drc.gain_db() == doctest::Approx(0.9802 * g0).epsilon(1e-4));
  }
  SUBCASE("steady-state output level") {
    dsp::ComplexVector<double> base(257);
    nn::SplitMix64 rng(4);
    for (auto& v : base) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    base *= std::pow(10.0, (-20.0 - drc.frame_level_db(base)) / 20.0);
    CHECK(drc.frame_level_db(base) == doctest::Approx(-20.0).epsilon(1e-9));
    dsp::ComplexVector<double> out;
    for (int k = 0; k < 400; ++k) {
      out = base;
      drc.step(out);
    }
    CHECK(std::abs(drc.frame_level_db(out) - (-23.3333)) <= 0.05);
  }
}

TEST_CASE("fitting chain is causal") {
  const auto presc = NalrPrescription::from_audiogram(sloping());
  const Eigen::VectorXd window = dsp::sqrt_hann<double>(512);
  const dsp::StreamProcessor proc = [&](const dsp::SignalMatrix<double>& in) {
    FittingChain chain(presc, DrcConfig{}, window);
    return stft_process(in.col(0), [&](auto& f) { chain.process(f); });
  };
  const dsp::SignalMatrix<double> x = white_noise(8192, 5);
  const dsp::CausalityHarness harness(proc, x);
  for (Index n : {1000, 4000, 6001}) {
    const auto report = harness.trial(n, 128, static_cast<std::uint64_t>(n));
    CHECK(report.pass);
    CHECK(report.first_diff_index >= n - 128);
  }
}

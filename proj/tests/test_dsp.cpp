#include "doctest.h"

#include <cmath>
#include <numbers>

#include "hearx/dsp/causality.hpp"
#include "hearx/dsp/stft.hpp"
#include "hearx/nn/rng.hpp"

using namespace hearx;
using namespace hearx::dsp;

namespace {

SignalMatrix<double> noise(Index n, Index c, std::uint64_t seed) {
  nn::SplitMix64 rng(seed);
  SignalMatrix<double> x(n, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < n; ++i) x(i, j) = rng.normal();
  return x;
}

// Analysis frame k resubmitted as target frame k + P.
VectorX<double> identity_chain(const SignalMatrix<double>& x, const StftConfig& cfg, Index channel = 0) {
  StreamingStft<double> s(cfg, x.cols());
  const Index frames = x.rows() / cfg.hop;
  VectorX<double> out(frames * cfg.hop);
  for (Index k = 0; k < frames; ++k) {
    const FrameMatrix<double> f = s.analyze_step(x.middleRows(k * cfg.hop, cfg.hop));
    const ComplexVector<double> col = f.col(channel);
    out.segment(k * cfg.hop, cfg.hop) = s.synthesize_step(col, k + cfg.lookahead);
  }
  return out;
}

double relative_rms(const VectorX<double>& a, const VectorX<double>& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_CASE("sqrt-Hann window values") {
  const auto w4 = sqrt_hann<double>(4);
  CHECK(w4[0] == 0.0);
  CHECK(w4[1] == doctest::Approx(0.70710678).epsilon(1e-8));
  CHECK(w4[2] == doctest::Approx(1.0));
  CHECK(w4[3] == doctest::Approx(0.70710678).epsilon(1e-8));
  const auto w2 = sqrt_hann<double>(2);
  CHECK(w2[0] == 0.0);
  CHECK(w2[1] == doctest::Approx(1.0));
  CHECK_THROWS_AS(sqrt_hann<double>(1), Error);
  CHECK_THROWS_AS(sqrt_hann<double>(7), Error);
}

TEST_CASE("squared window overlap-adds to a constant at every sample") {
  // sum_k (0.5 - 0.5 cos(2 pi (i - 128 k) / 512)) over four shifts = 4 * 0.5 = 2.
  const auto w = sqrt_hann<double>(512);
  for (Index i = 0; i < 512; ++i) {
    double sum = 0.0;
    for (Index k = -4; k <= 4; ++k) {
      const Index j = i - k * 128;
      if (j >= 0 && j < 512) sum += w[j] * w[j];
    }
    CHECK(std::abs(sum - 2.0) <= 1e-12);
  }
  CHECK(StreamingStft<double>(StftConfig{}, 1).cola_constant() == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("analysis of zero, DC and impulse inputs") {
  const StftConfig cfg;
  const auto w = sqrt_hann<double>(cfg.win);

  StreamingStft<double> zero(cfg, 2);
  const auto z = zero.analyze_step(SignalMatrix<double>::Zero(cfg.hop, 2));
  CHECK(z.cwiseAbs().maxCoeff() == 0.0);
  CHECK(zero.consumed() == cfg.hop);

  StreamingStft<double> dc(cfg, 1);
  FrameMatrix<double> f;
  for (Index k = 0; k < cfg.overlap(); ++k) f = dc.analyze_step(SignalMatrix<double>::Ones(cfg.hop, 1));
  // Bin 0 equals the window sum cot(pi / (2 win)) ~ 325.9 for the periodic sqrt-Hann.
  CHECK(std::abs(f(0, 0)) == doctest::Approx(w.sum()).epsilon(1e-12));
  CHECK(w.sum() == doctest::Approx(1.0 / std::tan(std::numbers::pi / 1024)).epsilon(1e-12));
  for (Index k = 1; k < cfg.bins(); k += 37) {
    std::complex<double> direct = 0.0;
    for (Index n = 0; n < cfg.win; ++n) direct += w[n] * std::polar(1.0, -2.0 * std::numbers::pi * k * n / cfg.win);
    CHECK(std::abs(f(k, 0) - direct) <= 1e-9);
  }

  // Impulse at absolute sample p = 700 lies in frame 5, which starts at 6 * 128 - 512 = 256.
  const Index p = 700;
  SignalMatrix<double> x = SignalMatrix<double>::Zero(6 * cfg.hop, 1);
  x(p, 0) = 1.0;
  StreamingStft<double> imp(cfg, 1);
  for (Index k = 0; k < 6; ++k) f = imp.analyze_step(x.middleRows(k * cfg.hop, cfg.hop));
  const Index offset = p - 256;
  for (Index k = 0; k < cfg.bins(); k += 19) {
    const auto expect = w[offset] * std::polar(1.0, -2.0 * std::numbers::pi * k * offset / 512.0);
    CHECK(std::abs(f(k, 0) - expect) <= 1e-12);
  }
  CHECK_THROWS_AS(imp.analyze_step(SignalMatrix<double>::Zero(cfg.hop - 1, 1)), Error);
}

TEST_CASE("identity chain reconstructs the input after the alignment offset") {
  const StftConfig cfg;
  const SignalMatrix<double> x = noise(32000, 1, 5);
  const VectorX<double> y = identity_chain(x, cfg);
  const Index off = cfg.lookahead * cfg.hop;
  CHECK(off == 384);
  const VectorX<double> a = y.segment(off, y.size() - off);
  const VectorX<double> b = x.col(0).head(y.size() - off);
  CHECK(relative_rms(a, b) <= 1e-6);
}

TEST_CASE("synthesis of zero and constant frames") {
  const StftConfig cfg;
  StreamingStft<double> s(cfg, 1);
  const auto w = sqrt_hann<double>(cfg.win);
  RealFft<double> fft(cfg.win);
  std::vector<double> buf(w.data(), w.data() + w.size());
  ComplexVector<double> dc(cfg.bins());
  fft.forward(buf.data(), dc.data());
  VectorX<double> out;
  for (Index k = 0; k < 8; ++k) {
    s.analyze_step(SignalMatrix<double>::Zero(cfg.hop, 1));
    out = s.synthesize_step(dc, k + cfg.lookahead);
  }
  CHECK((out.array() - 1.0).abs().maxCoeff() <= 1e-12);

  StreamingStft<double> z(cfg, 1);
  z.analyze_step(SignalMatrix<double>::Zero(cfg.hop, 1));
  CHECK(z.synthesize_step(ComplexVector<double>::Zero(cfg.bins()), 3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("synthesis enforces ordering and never emits beyond consumed input") {
  const StftConfig cfg;
  StreamingStft<double> s(cfg, 1);
  const ComplexVector<double> zero = ComplexVector<double>::Zero(cfg.bins());
  // Frames 0..2 emit only negative time and need no input.
  for (Index j = 0; j < 3; ++j) s.synthesize_step(zero, j);
  CHECK_THROWS_AS(s.synthesize_step(zero, 3), Error);  // would emit [0, 128) before it arrives
  s.analyze_step(SignalMatrix<double>::Zero(cfg.hop, 1));
  CHECK_THROWS_AS(s.synthesize_step(zero, 5), Error);
  CHECK_NOTHROW(s.synthesize_step(zero, 3));
  CHECK(s.emitted() <= s.consumed());
  try {
    s.synthesize_step(zero, 7);
    FAIL("expected a contract violation");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::contract_violation);
  }
}

TEST_CASE("block-wise analysis equals one-shot framing bit for bit") {
  const StftConfig cfg;
  const SignalMatrix<double> x = noise(5000, 3, 8);
  const auto full = stft<double>(x, cfg);
  StreamingStft<double> s(cfg, 3);
  SignalMatrix<double> padded = SignalMatrix<double>::Zero(full.frames() * cfg.hop, 3);
  padded.topRows(x.rows()) = x;
  for (Index k = 0; k < full.frames(); ++k) {
    const FrameMatrix<double> f = s.analyze_step(padded.middleRows(k * cfg.hop, cfg.hop));
    CHECK(f == FrameMatrix<double>(full.frame(k)));
  }
}

TEST_CASE("causality harness") {
  const SignalMatrix<double> x = noise(4096, 1, 2);

  SUBCASE("identity processor with zero budget") {
    StreamProcessor id = [](const SignalMatrix<double>& in) { return VectorX<double>(in.col(0)); };
    const auto r = causality_check(id, x, 1000, 0);
    CHECK(r.first_diff_index == 1000);
    CHECK(r.pass);
    CHECK(r.sensitive);
  }
  SUBCASE("an input-blind processor passes but is not sensitive") {
    StreamProcessor blind = [](const SignalMatrix<double>& in) { return SignalMatrix<double>::Zero(in.rows(), 1); };
    const auto r = causality_check(blind, x, 1000, 0);
    CHECK(r.pass);
    CHECK_FALSE(r.sensitive);
    CHECK(r.first_diff_index == x.rows());
  }
  SUBCASE("a look-ahead on any tap is caught") {
    StreamProcessor taps = [](const SignalMatrix<double>& in) {
      SignalMatrix<double> y = SignalMatrix<double>::Zero(in.rows(), 2);
      y.col(0) = in.col(0);
      for (Index t = 0; t + 300 < in.rows(); ++t) y(t, 1) = in(t + 300, 0);
      return y;
    };
    const auto r = causality_check(taps, x, 2000, 128);
    CHECK_FALSE(r.pass);
    CHECK(r.first_diff_index == 1700);
  }
  SUBCASE("processors must keep one row per sample") {
    StreamProcessor short_out = [](const SignalMatrix<double>& in) { return SignalMatrix<double>(in.topRows(10)); };
    CHECK_THROWS_AS(CausalityHarness(short_out, x), Error);
  }
  SUBCASE("a 256-sample look-ahead average is caught") {
    StreamProcessor ahead = [](const SignalMatrix<double>& in) {
      VectorX<double> y = VectorX<double>::Zero(in.rows());
      for (Index t = 0; t < in.rows(); ++t)
        for (Index j = 0; j < 256 && t + j < in.rows(); ++j) y[t] += in(t + j, 0) / 256.0;
      return y;
    };
    const auto r = causality_check(ahead, x, 2000, 128);
    CHECK_FALSE(r.pass);
    CHECK(r.first_diff_index < 2000 - 128);
  }
  SUBCASE("non-deterministic processor") {
    int calls = 0;
    StreamProcessor flaky = [&calls](const SignalMatrix<double>& in) {
      VectorX<double> y = in.col(0);
      y[0] += ++calls;
      return y;
    };
    try {
      CausalityHarness h(flaky, x);
      FAIL("expected indeterminate");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::indeterminate);
    }
  }
  SUBCASE("the STFT identity chain meets a one-hop budget at 20 random indices") {
    const StftConfig cfg;
    StreamProcessor chain = [&cfg](const SignalMatrix<double>& in) {
      VectorX<double> y = identity_chain(in, cfg);
      return y;
    };
    CausalityHarness h(chain, x);
    nn::SplitMix64 rng(99);
    for (int trial = 0; trial < 20; ++trial) {
      const Index n = 256 + static_cast<Index>(rng.next() % 3500);
      CHECK(h.trial(n, cfg.hop, rng.next()).pass);
    }
  }
}

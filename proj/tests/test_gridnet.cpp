#include "doctest.h"

#include <cmath>
#include <cstring>
#include <iostream>

#include "hearx/gridnet/gridnet.hpp"
#include "hearx/nn/rng.hpp"

using namespace hearx;
using namespace hearx::gridnet;

namespace {

GridNetConfig small_config() {
  GridNetConfig c = GridNetConfig::toy(2);
  c.n_freq = 17;
  c.speaker_dim = 8;
  return c;
}

Tensor random_tensor(std::vector<Index> shape, std::uint64_t seed, float scale = 1.0f) {
  Tensor t(std::move(shape));
  nn::SplitMix64 rng(seed);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(-scale, scale));
  return t;
}

std::vector<float> random_embedding(Index n, std::uint64_t seed) {
  nn::SplitMix64 rng(seed);
  std::vector<float> e(static_cast<size_t>(n));
  for (float& v : e) v = static_cast<float>(rng.uniform(-1, 1));
  return e;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<size_t>(a.size())) == 0;
}

Tensor perturb_from(const Tensor& x, Index from, std::uint64_t seed) {
  Tensor y = x;
  nn::SplitMix64 rng(seed);
  const Index per = x.size() / x.dim(0);
  for (Index i = from * per; i < y.size(); ++i) y[i] = static_cast<float>(rng.uniform(-2, 2));
  return y;
}

bool frames_equal(const Tensor& a, const Tensor& b, Index t) {
  const Index per = a.size() / a.dim(0);
  return std::memcmp(a.data() + t * per, b.data() + t * per, sizeof(float) * static_cast<size_t>(per)) == 0;
}

void zero(nn::WeightStore& store, const std::string& name) {
  Tensor t = store.get(name);
  std::fill(t.values().begin(), t.values().end(), 0.0f);
  store.set(name, std::move(t));
}

}  // namespace

TEST_CASE("RI stacking") {
  dsp::ComplexSpectrogram<double> one(1, 1, 1);
  one(0, 0, 0) = {1.0, 2.0};
  const Tensor s = stack_ri(one);
  CHECK(s.shape() == std::vector<Index>{1, 1, 2});
  CHECK(s[0] == 1.0f);
  CHECK(s[1] == 2.0f);

  dsp::ComplexSpectrogram<double> six(3, 5, 6), e1(3, 5, 1), e2(3, 5, 1);
  nn::SplitMix64 rng(1);
  for (Index t = 0; t < 3; ++t)
    for (Index f = 0; f < 5; ++f) {
      for (Index c = 0; c < 6; ++c) six(t, f, c) = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      e1(t, f, 0) = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      e2(t, f, 0) = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    }
  CHECK(stack_ri(six).dim(2) == 12);
  const dsp::ComplexSpectrogram<double>* extras[] = {&e1, &e2};
  const Tensor x = stack_ri(six, extras);
  CHECK(x.dim(2) == 16);
  CHECK(x.at({2, 4, 11}) == static_cast<float>(six(2, 4, 5).imag()));
  CHECK(x.at({1, 3, 12}) == static_cast<float>(e1(1, 3, 0).real()));
  CHECK(x.at({1, 3, 15}) == static_cast<float>(e2(1, 3, 0).imag()));

  // The per-frame variant agrees with the whole-sequence stacking.
  nn::RowMatrixXf frame(5, 16);
  const dsp::ComplexVector<double> v1 = e1.frame(1).col(0), v2 = e2.frame(1).col(0);
  const dsp::ComplexVector<double>* fe[] = {&v1, &v2};
  stack_ri_frame(six.frame(1), fe, nn::MatrixMap(frame.data(), 5, 16));
  CHECK((frame - nn::RowMatrixXf(x.frame(1))).cwiseAbs().maxCoeff() == 0.0f);

  // Output head round trip.
  const Tensor head = random_tensor({4, 5, 2}, 3);
  const auto spec = unstack_ri(head);
  CHECK(bit_equal(stack_ri(spec), head));

  dsp::ComplexSpectrogram<double> wrong(2, 5, 1);
  const dsp::ComplexSpectrogram<double>* bad[] = {&wrong};
  CHECK_THROWS_AS(stack_ri(six, bad), Error);
}

TEST_CASE("parameter inventory") {
  // Hand audit of the toy model with two microphones (D=16, B=2, I=2, H=32, L=2, E=2, F=257, 128-dim embedding).
  const Index conv_in = 16 * 4 * 3 * 3 + 16;
  const Index ln_in = 2 * 257 * 16;
  const Index film = 2 * (16 * 128 + 16);
  const Index lstm = 4 * 32 * (16 * 2) + 4 * 32 * 32 + 4 * 32;
  const Index temporal = 2 * 16 + lstm + 32 * 16 * 2 + 16;
  const Index spectral = 2 * 16 + 2 * lstm + 64 * 16 * 2 + 16;
  const Index qk = 16 * 4 + 4 + 2 + 2 * (2 * 257 * 2);
  const Index v = 16 * 16 + 16 + 2 + 2 * (2 * 257 * 8);
  const Index proj = 16 * 16 + 16 + 1 + 2 * (257 * 16);
  const Index conv_out = 2 * 16 * 3 * 3 + 2;
  const Index expected = conv_in + ln_in + 2 * (film + temporal + spectral + 2 * qk + v + proj) + conv_out;
  CHECK(expected == 116112);
  CHECK(param_count(GridNetConfig::toy(2)) == expected);

  const auto store = init_weights(GridNetConfig::toy(2), "dnn1", 1);
  CHECK(store.parameter_count() - store.get("dnn1.hparams").size() == expected);

  // The second stage only widens the first convolution.
  const auto s1 = parameter_specs(GridNetConfig::toy(6), "n"), s2 = parameter_specs(GridNetConfig::toy(6, true), "n");
  REQUIRE(s1.size() == s2.size());
  for (size_t i = 0; i < s1.size(); ++i) {
    CHECK(s1[i].name == s2[i].name);
    if (s1[i].name == "n.conv_in.weight") {
      CHECK(s1[i].shape[1] == 12);
      CHECK(s2[i].shape[1] == 16);
    } else {
      CHECK(s1[i].shape == s2[i].shape);
    }
  }

  const Index full = param_count(GridNetConfig::full_size(6));
  std::cout << "full-size GridNet parameters: " << full << '\n';
  CHECK(std::abs(static_cast<double>(full) - 8e6) <= 0.25 * 8e6);
}

TEST_CASE("configuration record round-trips") {
  GridNetConfig c = small_config();
  c.causal_attention = false;
  const auto store = init_weights(c, "dnn2", 3);
  CHECK(config_from_store(store, "dnn2") == c);
  GridNetConfig bad = c;
  bad.emb_dim = 15;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.unfold_stride = 2;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(GridNet(small_config(), nn::WeightStore(), "dnn1"), Error);
}

TEST_CASE("sub-band temporal module") {
  auto cfg = small_config();
  auto store = init_weights(cfg, "m", 5);
  const Tensor x = random_tensor({9, cfg.n_freq, cfg.emb_dim}, 6);

  SUBCASE("is causal over time") {
    const GridNet net(cfg, store, "m");
    const Tensor y = net.subband_temporal(0, x);
    for (Index t = 0; t + 1 < 9; ++t) {
      const Tensor y2 = net.subband_temporal(0, perturb_from(x, t + 1, 40 + static_cast<std::uint64_t>(t)));
      for (Index s = 0; s <= t; ++s) CHECK(frames_equal(y, y2, s));
    }
  }
  SUBCASE("zero LSTM gives zero output") {
    cfg.unfold = 1;
    store = init_weights(cfg, "m", 5);
    for (const char* n : {"w_ih", "w_hh", "bias"}) zero(store, std::string("m.block0.temporal.lstm.") + n);
    zero(store, "m.block0.temporal.deconv.bias");
    const GridNet net(cfg, store, "m");
    const Tensor y = net.subband_temporal(0, random_tensor({4, cfg.n_freq, cfg.emb_dim}, 7));
    for (float v : y.values()) CHECK(v == 0.0f);
  }
  SUBCASE("a single frame is accepted") {
    const GridNet net(cfg, store, "m");
    CHECK(net.subband_temporal(0, random_tensor({1, cfg.n_freq, cfg.emb_dim}, 8)).dim(0) == 1);
  }
}

TEST_CASE("intra-frame spectral module") {
  const auto cfg = small_config();
  auto store = init_weights(cfg, "m", 9);
  const Tensor x = random_tensor({5, cfg.n_freq, cfg.emb_dim}, 10);
  const GridNet net(cfg, store, "m");
  const Tensor y = net.intraframe_spectral(0, x);
  CHECK(y.shape() == x.shape());

  SUBCASE("frames are processed independently") {
    Tensor x2 = x;
    x2.frame(2) = random_tensor({1, cfg.n_freq, cfg.emb_dim}, 11).frame(0);
    const Tensor y2 = net.intraframe_spectral(0, x2);
    for (Index t = 0; t < 5; ++t) CHECK(frames_equal(y, y2, t) == (t != 2));
  }
  SUBCASE("zero weights give zero output") {
    auto z = store;
    for (const auto& [name, t] : store.tensors())
      if (name.find(".spectral.lstm") != std::string::npos || name.find(".spectral.deconv") != std::string::npos)
        zero(z, name);
    const GridNet zn(cfg, z, "m");
    const Tensor delta = zn.intraframe_spectral(0, x);
    for (float v : delta.values()) CHECK(v == 0.0f);
  }
  SUBCASE("reversing frequency with mirrored weights reverses the output") {
    // Mirror: swap the two directions, reverse the order of unfolded bins in
    // the input weights, reverse the transposed-conv taps and swap their halves.
    const Index d = cfg.emb_dim, h = cfg.hidden, k = cfg.unfold;
    auto m = store;
    const std::string p = "m.block0.spectral.";
    for (const char* dir : {"lstm_fwd", "lstm_bwd"}) {
      const std::string other = std::string(dir) == "lstm_fwd" ? "lstm_bwd" : "lstm_fwd";
      Tensor w_ih = store.get(p + other + ".w_ih");
      const Tensor& src = store.get(p + other + ".w_ih");
      for (Index r = 0; r < 4 * h; ++r)
        for (Index i = 0; i < k; ++i)
          for (Index c = 0; c < d; ++c) w_ih.at({r, i * d + c}) = src.at({r, (k - 1 - i) * d + c});
      m.set(p + dir + ".w_ih", w_ih);
      m.set(p + dir + ".w_hh", store.get(p + other + ".w_hh"));
      m.set(p + dir + ".bias", store.get(p + other + ".bias"));
    }
    const Tensor& w = store.get(p + "deconv.weight");
    Tensor wm(w.shape());
    for (Index r = 0; r < 2 * h; ++r)
      for (Index c = 0; c < d; ++c)
        for (Index i = 0; i < k; ++i) wm.at({r, c, i}) = w.at({(r + h) % (2 * h), c, k - 1 - i});
    m.set(p + "deconv.weight", wm);

    Tensor xr(x.shape());
    for (Index t = 0; t < 5; ++t)
      for (Index f = 0; f < cfg.n_freq; ++f) xr.frame(t).row(f) = x.frame(t).row(cfg.n_freq - 1 - f);
    const Tensor yr = GridNet(cfg, m, "m").intraframe_spectral(0, xr);
    double err = 0;
    for (Index t = 0; t < 5; ++t)
      for (Index f = 0; f < cfg.n_freq; ++f)
        err = std::max(err, static_cast<double>(
                                (yr.frame(t).row(f) - y.frame(t).row(cfg.n_freq - 1 - f)).cwiseAbs().maxCoeff()));
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("full-band attention is causal only when masked") {
  auto cfg = small_config();
  const auto store = init_weights(cfg, "m", 12);
  const Tensor x = random_tensor({7, cfg.n_freq, cfg.emb_dim}, 13);
  const GridNet net(cfg, store, "m");
  const Tensor y = net.full_band_attention(0, x);
  const Tensor y2 = net.full_band_attention(0, perturb_from(x, 4, 1));
  for (Index t = 0; t < 4; ++t) CHECK(frames_equal(y, y2, t));

  cfg.causal_attention = false;
  const GridNet open(cfg, store, "m");
  const Tensor z = open.full_band_attention(0, x), z2 = open.full_band_attention(0, perturb_from(x, 4, 1));
  CHECK_FALSE(frames_equal(z, z2, 0));
}

TEST_CASE("whole model") {
  const auto cfg = small_config();
  const auto store = init_weights(cfg, "dnn1", 7);
  const GridNet net(cfg, store, "dnn1");
  const Tensor x = random_tensor({10, cfg.n_freq, cfg.input_channels}, 3);
  const auto emb = random_embedding(cfg.speaker_dim, 4);
  const Tensor y = net.forward(x, emb);
  CHECK(y.shape() == std::vector<Index>{10, cfg.n_freq, 2});

  SUBCASE("future frames never change past outputs") {
    for (Index t = 0; t + 1 < 10; ++t) {
      const Tensor y2 = net.forward(perturb_from(x, t + 1, 70 + static_cast<std::uint64_t>(t)), emb);
      for (Index s = 0; s <= t; ++s) CHECK(frames_equal(y, y2, s));
    }
  }
  SUBCASE("the embedding conditions the output") {
    CHECK(max_abs_diff(y, net.forward(x, random_embedding(cfg.speaker_dim, 5))) > 0.0);
  }
  SUBCASE("identity FiLM equals the unconditioned model bit for bit") {
    auto ident = store;
    for (Index b = 0; b < cfg.blocks; ++b) {
      zero(ident, "dnn1.block" + std::to_string(b) + ".film.w_gamma");
      zero(ident, "dnn1.block" + std::to_string(b) + ".film.w_beta");
    }
    GridNetConfig off = cfg;
    off.use_film = false;
    CHECK(bit_equal(GridNet(cfg, ident, "dnn1").forward(x, emb), GridNet(off, store, "dnn1").forward(x, emb)));
  }
  SUBCASE("zero weights give a zero spectrogram") {
    auto z = store;
    for (const auto& [name, t] : store.tensors())
      if (name != "dnn1.hparams") zero(z, name);
    const auto out = model_forward(GridNet(cfg, z, "dnn1"), x, emb);
    CHECK(out.frames() == 10 + cfg.lookahead);
    for (const auto& v : out.data()) CHECK(v == std::complex<double>(0.0));
  }
  SUBCASE("lookahead padding") {
    // Output frame j of the padded run is the full forward on P zero frames then the input.
    const auto out = model_forward(net, x, emb);
    Tensor padded({10 + cfg.lookahead, cfg.n_freq, cfg.input_channels});
    std::copy(x.values().begin(), x.values().end(), padded.data() + cfg.lookahead * cfg.n_freq * cfg.input_channels);
    const Tensor ref = net.forward(padded, emb);
    for (Index j = 0; j < out.frames(); ++j)
      for (Index f = 0; f < cfg.n_freq; ++f) {
        CHECK(out(j, f, 0).real() == ref.at({j, f, 0}));
        CHECK(out(j, f, 0).imag() == ref.at({j, f, 1}));
      }
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(net.forward(random_tensor({3, cfg.n_freq, 6}, 1), emb), Error);
    try {
      net.forward(x, random_embedding(cfg.speaker_dim - 1, 1));
      FAIL("expected invalid-shape");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::invalid_shape);
    }
  }
}

TEST_CASE("streaming inference reproduces the full-sequence forward") {
  for (Index unfold : {1, 2, 3}) {
    auto cfg = small_config();
    cfg.unfold = unfold;
    const auto store = init_weights(cfg, "dnn1", 7);
    const GridNet net(cfg, store, "dnn1");
    const Tensor x = random_tensor({12, cfg.n_freq, cfg.input_channels}, 3);
    const auto emb = random_embedding(cfg.speaker_dim, 4);

    const Tensor full = net.forward(x, emb);
    auto stream = net.stream(emb);
    Tensor streamed(full.shape());
    for (Index t = 0; t < x.dim(0); ++t) streamed.frame(t) = stream.step(x.frame(t));
    CHECK(stream.frames_processed() == 12);
    CHECK(max_abs_diff(full, streamed) <= 1e-5);
  }
}

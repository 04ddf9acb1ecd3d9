#include "hearx/gridnet/gridnet.hpp"

#include <algorithm>
#include <cmath>

namespace hearx::gridnet {

using nn::ConstMatrixMap;
using nn::Init;
using nn::MatrixMap;
using nn::ParamSpec;
using nn::RowMatrixXf;

namespace {

// Normalizes each row of m over its columns.
void ln_rows(Eigen::Ref<RowMatrixXf> m, const float* gamma, const float* beta, float eps = 1e-5f) {
  const Index n = m.cols();
  for (Index r = 0; r < m.rows(); ++r) {
    float* p = m.row(r).data();
    double sum = 0.0, sq = 0.0;
    for (Index i = 0; i < n; ++i) sum += p[i];
    const double mean = sum / static_cast<double>(n);
    for (Index i = 0; i < n; ++i) sq += (p[i] - mean) * (p[i] - mean);
    const double inv = 1.0 / std::sqrt(sq / static_cast<double>(n) + eps);
    for (Index i = 0; i < n; ++i) p[i] = static_cast<float>((p[i] - mean) * inv) * gamma[i] + beta[i];
  }
}

// Normalizes the whole block (all rows and columns together); gamma/beta are
// row-major with the block's shape.
template <typename Block>
void ln_block(Block&& m, const float* gamma, const float* beta, float eps = 1e-5f) {
  const Index rows = m.rows(), cols = m.cols();
  double sum = 0.0, sq = 0.0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) sum += m(r, c);
  const double n = static_cast<double>(rows * cols);
  const double mean = sum / n;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) sq += (m(r, c) - mean) * (m(r, c) - mean);
  const double inv = 1.0 / std::sqrt(sq / n + eps);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      const Index i = r * cols + c;
      m(r, c) = static_cast<float>((m(r, c) - mean) * inv) * gamma[i] + beta[i];
    }
}

std::vector<RowMatrixXf> deconv_taps(const Tensor& w) {
  // ConvTranspose1d layout [in, out, k].
  std::vector<RowMatrixXf> taps(static_cast<size_t>(w.dim(2)), RowMatrixXf(w.dim(0), w.dim(1)));
  for (Index i = 0; i < w.dim(0); ++i)
    for (Index o = 0; o < w.dim(1); ++o)
      for (Index k = 0; k < w.dim(2); ++k) taps[static_cast<size_t>(k)](i, o) = w.at({i, o, k});
  return taps;
}

Eigen::RowVectorXf row_vector(const Tensor& t) { return Eigen::Map<const Eigen::RowVectorXf>(t.data(), t.size()); }

void add_lstm(std::vector<ParamSpec>& out, const std::string& name, Index in, Index hidden) {
  out.push_back({name + ".w_ih", {4 * hidden, in}, Init::uniform, hidden});
  out.push_back({name + ".w_hh", {4 * hidden, hidden}, Init::uniform, hidden});
  out.push_back({name + ".bias", {4 * hidden}, Init::uniform, hidden});
}

void add_ln(std::vector<ParamSpec>& out, const std::string& name, std::vector<Index> shape) {
  out.push_back({name + ".gamma", shape, Init::ones});
  out.push_back({name + ".beta", shape, Init::zeros});
}

void add_projection(std::vector<ParamSpec>& out, const std::string& name, Index in, Index heads, Index width,
                    Index freq) {
  out.push_back({name + ".weight", {heads * width, in}, Init::uniform, in});
  out.push_back({name + ".bias", {heads * width}, Init::uniform, in});
  out.push_back({name + ".prelu", {heads}, Init::constant, 1, 0.25f});
  add_ln(out, name + ".ln", {heads, freq, width});
}

}  // namespace

// ---------------------------------------------------------------- config

GridNetConfig GridNetConfig::toy(Index mics, bool second_stage) {
  GridNetConfig c;
  c.input_channels = 2 * mics + (second_stage ? 4 : 0);
  return c;
}

GridNetConfig GridNetConfig::full_size(Index mics, bool second_stage) {
  GridNetConfig c;
  c.emb_dim = 48;
  c.blocks = 6;
  c.unfold = 4;
  c.unfold_stride = 1;
  c.hidden = 192;
  c.heads = 4;
  c.qk_dim = 2;
  c.input_channels = 2 * mics + (second_stage ? 4 : 0);
  return c;
}

void GridNetConfig::validate() const {
  require(emb_dim >= 1 && blocks >= 0 && unfold >= 1 && hidden >= 1 && heads >= 1 && qk_dim >= 1,
          Errc::invalid_config, "gridnet: sizes must be positive");
  require(unfold_stride == 1, Errc::invalid_config, "gridnet: unfold stride must be 1 for frame-online output");
  require(emb_dim % heads == 0, Errc::invalid_config, "gridnet: D must be divisible by the head count");
  require(input_channels >= 2 && input_channels % 2 == 0, Errc::invalid_config,
          "gridnet: input channels must be a positive even count (RI pairs)");
  require(n_freq >= 1 && lookahead >= 0 && speaker_dim >= 1, Errc::invalid_config, "gridnet: bad dimensions");
  require(conv_time >= 1 && conv_freq >= 1 && conv_freq % 2 == 1, Errc::invalid_config,
          "gridnet: conv kernel must have odd frequency size");
}

std::vector<float> GridNetConfig::to_hparams() const {
  return {static_cast<float>(emb_dim),    static_cast<float>(blocks),         static_cast<float>(unfold),
          static_cast<float>(unfold_stride), static_cast<float>(hidden),      static_cast<float>(heads),
          static_cast<float>(qk_dim),     static_cast<float>(input_channels), static_cast<float>(n_freq),
          static_cast<float>(lookahead),  static_cast<float>(conv_time),      static_cast<float>(conv_freq),
          static_cast<float>(speaker_dim), causal_attention ? 1.0f : 0.0f,    use_film ? 1.0f : 0.0f};
}

GridNetConfig GridNetConfig::from_hparams(const Tensor& h) {
  require(h.size() == 15, Errc::format_error, "gridnet: hparams record must have 15 entries");
  auto at = [&](Index i) { return static_cast<Index>(std::lround(h[i])); };
  GridNetConfig c;
  c.emb_dim = at(0);
  c.blocks = at(1);
  c.unfold = at(2);
  c.unfold_stride = at(3);
  c.hidden = at(4);
  c.heads = at(5);
  c.qk_dim = at(6);
  c.input_channels = at(7);
  c.n_freq = at(8);
  c.lookahead = at(9);
  c.conv_time = at(10);
  c.conv_freq = at(11);
  c.speaker_dim = at(12);
  c.causal_attention = h[13] != 0.0f;
  c.use_film = h[14] != 0.0f;
  c.validate();
  return c;
}

std::vector<ParamSpec> parameter_specs(const GridNetConfig& cfg, const std::string& prefix) {
  cfg.validate();
  const Index d = cfg.emb_dim, f = cfg.n_freq, i = cfg.unfold, h = cfg.hidden;
  std::vector<ParamSpec> out;
  const Index conv_fan = cfg.input_channels * cfg.conv_time * cfg.conv_freq;
  out.push_back({prefix + ".conv_in.weight", {d, cfg.input_channels, cfg.conv_time, cfg.conv_freq}, Init::uniform, conv_fan});
  out.push_back({prefix + ".conv_in.bias", {d}, Init::uniform, conv_fan});
  add_ln(out, prefix + ".ln_in", {f, d});
  for (Index b = 0; b < cfg.blocks; ++b) {
    const std::string blk = prefix + ".block" + std::to_string(b);
    out.push_back({blk + ".film.w_gamma", {d, cfg.speaker_dim}, Init::uniform, cfg.speaker_dim});
    out.push_back({blk + ".film.b_gamma", {d}, Init::ones});
    out.push_back({blk + ".film.w_beta", {d, cfg.speaker_dim}, Init::uniform, cfg.speaker_dim});
    out.push_back({blk + ".film.b_beta", {d}, Init::zeros});

    add_ln(out, blk + ".temporal.ln", {d});
    add_lstm(out, blk + ".temporal.lstm", d * i, h);
    out.push_back({blk + ".temporal.deconv.weight", {h, d, i}, Init::uniform, h * i});
    out.push_back({blk + ".temporal.deconv.bias", {d}, Init::uniform, h * i});

    add_ln(out, blk + ".spectral.ln", {d});
    add_lstm(out, blk + ".spectral.lstm_fwd", d * i, h);
    add_lstm(out, blk + ".spectral.lstm_bwd", d * i, h);
    out.push_back({blk + ".spectral.deconv.weight", {2 * h, d, i}, Init::uniform, 2 * h * i});
    out.push_back({blk + ".spectral.deconv.bias", {d}, Init::uniform, 2 * h * i});

    add_projection(out, blk + ".attn.q", d, cfg.heads, cfg.qk_dim, f);
    add_projection(out, blk + ".attn.k", d, cfg.heads, cfg.qk_dim, f);
    add_projection(out, blk + ".attn.v", d, cfg.heads, cfg.value_dim(), f);
    add_projection(out, blk + ".attn.proj", d, 1, d, f);
  }
  const Index out_fan = d * cfg.conv_time * cfg.conv_freq;
  out.push_back({prefix + ".conv_out.weight", {2, d, cfg.conv_time, cfg.conv_freq}, Init::uniform, out_fan});
  out.push_back({prefix + ".conv_out.bias", {2}, Init::uniform, out_fan});
  return out;
}

Index param_count(const GridNetConfig& cfg) { return nn::count_parameters(parameter_specs(cfg, "net")); }

nn::WeightStore init_weights(const GridNetConfig& cfg, const std::string& prefix, std::uint64_t seed) {
  nn::WeightStore store = nn::init_weights(parameter_specs(cfg, prefix), seed);
  const auto hp = cfg.to_hparams();
  store.set(prefix + ".hparams", Tensor({static_cast<Index>(hp.size())}, hp));
  return store;
}

GridNetConfig config_from_store(const nn::WeightStore& store, const std::string& prefix) {
  return GridNetConfig::from_hparams(store.get(prefix + ".hparams"));
}

// ---------------------------------------------------------------- RI stacking

void stack_ri_frame(const Eigen::Ref<const dsp::FrameMatrix<double>>& mixture,
                    std::span<const dsp::ComplexVector<double>* const> extras, MatrixMap out) {
  const Index bins = mixture.rows(), mics = mixture.cols();
  require(out.rows() == bins && out.cols() == 2 * (mics + static_cast<Index>(extras.size())), Errc::invalid_shape,
          "stack_ri: output frame shape mismatch");
  for (Index f = 0; f < bins; ++f)
    for (Index c = 0; c < mics; ++c) {
      out(f, 2 * c) = static_cast<float>(mixture(f, c).real());
      out(f, 2 * c + 1) = static_cast<float>(mixture(f, c).imag());
    }
  Index col = 2 * mics;
  for (const auto* extra : extras) {
    require(extra != nullptr && extra->size() == bins, Errc::invalid_shape, "stack_ri: extra frame shape mismatch");
    for (Index f = 0; f < bins; ++f) {
      out(f, col) = static_cast<float>((*extra)[f].real());
      out(f, col + 1) = static_cast<float>((*extra)[f].imag());
    }
    col += 2;
  }
}

Tensor stack_ri(const dsp::ComplexSpectrogram<double>& mixture,
                std::span<const dsp::ComplexSpectrogram<double>* const> extras) {
  const Index frames = mixture.frames(), bins = mixture.bins();
  Index width = 2 * mixture.channels();
  for (const auto* e : extras) {
    require(e != nullptr && e->frames() == frames && e->bins() == bins, Errc::invalid_shape,
            "stack_ri: all inputs must share (T, F)");
    width += 2 * e->channels();
  }
  Tensor out({frames, bins, width});
  for (Index t = 0; t < frames; ++t) {
    MatrixMap fr = out.frame(t);
    auto m = mixture.frame(t);
    for (Index f = 0; f < bins; ++f) {
      Index col = 0;
      for (Index c = 0; c < mixture.channels(); ++c, col += 2) {
        fr(f, col) = static_cast<float>(m(f, c).real());
        fr(f, col + 1) = static_cast<float>(m(f, c).imag());
      }
      for (const auto* e : extras)
        for (Index c = 0; c < e->channels(); ++c, col += 2) {
          fr(f, col) = static_cast<float>((*e)(t, f, c).real());
          fr(f, col + 1) = static_cast<float>((*e)(t, f, c).imag());
        }
    }
  }
  return out;
}

dsp::ComplexSpectrogram<double> unstack_ri(const Tensor& ri) {
  require(ri.rank() == 3 && ri.dim(2) == 2, Errc::invalid_shape, "unstack_ri: expected [T, F, 2]");
  dsp::ComplexSpectrogram<double> out(ri.dim(0), ri.dim(1), 1);
  for (Index t = 0; t < ri.dim(0); ++t) {
    ConstMatrixMap fr = ri.frame(t);
    for (Index f = 0; f < ri.dim(1); ++f) out(t, f, 0) = {fr(f, 0), fr(f, 1)};
  }
  return out;
}

// ---------------------------------------------------------------- model

GridNet::GridNet(const GridNetConfig& cfg, const nn::WeightStore& store, const std::string& prefix) : cfg_(cfg) {
  cfg_.validate();
  nn::check_weights(store, parameter_specs(cfg_, prefix));
  auto w = [&](const std::string& n) -> const Tensor& { return store.get(prefix + "." + n); };

  conv_in_ = nn::Conv2d(w("conv_in.weight"), w("conv_in.bias"), nn::TimePadding::causal);
  conv_out_ = nn::Conv2d(w("conv_out.weight"), w("conv_out.bias"), nn::TimePadding::causal);
  ln_in_gamma_ = w("ln_in.gamma");
  ln_in_beta_ = w("ln_in.beta");

  auto projection = [&](const std::string& n) {
    Projection p;
    const Tensor& weight = w(n + ".weight");
    p.weight_t = weight.matrix(weight.dim(0), weight.dim(1)).transpose();
    p.bias = row_vector(w(n + ".bias"));
    const Tensor& a = w(n + ".prelu");
    p.prelu.assign(a.values().begin(), a.values().end());
    p.ln_gamma = w(n + ".ln.gamma");
    p.ln_beta = w(n + ".ln.beta");
    return p;
  };

  for (Index b = 0; b < cfg_.blocks; ++b) {
    const std::string blk = "block" + std::to_string(b);
    Block block;
    block.film = nn::Film(w(blk + ".film.w_gamma"), w(blk + ".film.b_gamma"), w(blk + ".film.w_beta"),
                          w(blk + ".film.b_beta"));
    auto& tm = block.temporal;
    tm.ln_gamma = w(blk + ".temporal.ln.gamma");
    tm.ln_beta = w(blk + ".temporal.ln.beta");
    tm.lstm = nn::Lstm(w(blk + ".temporal.lstm.w_ih"), w(blk + ".temporal.lstm.w_hh"), w(blk + ".temporal.lstm.bias"));
    tm.deconv = deconv_taps(w(blk + ".temporal.deconv.weight"));
    tm.deconv_bias = row_vector(w(blk + ".temporal.deconv.bias"));

    auto& sm = block.spectral;
    sm.ln_gamma = w(blk + ".spectral.ln.gamma");
    sm.ln_beta = w(blk + ".spectral.ln.beta");
    sm.fwd = nn::Lstm(w(blk + ".spectral.lstm_fwd.w_ih"), w(blk + ".spectral.lstm_fwd.w_hh"),
                      w(blk + ".spectral.lstm_fwd.bias"));
    sm.bwd = nn::Lstm(w(blk + ".spectral.lstm_bwd.w_ih"), w(blk + ".spectral.lstm_bwd.w_hh"),
                      w(blk + ".spectral.lstm_bwd.bias"));
    sm.deconv = deconv_taps(w(blk + ".spectral.deconv.weight"));
    sm.deconv_bias = row_vector(w(blk + ".spectral.deconv.bias"));

    block.attn.q = projection(blk + ".attn.q");
    block.attn.k = projection(blk + ".attn.k");
    block.attn.v = projection(blk + ".attn.v");
    block.attn.proj = projection(blk + ".attn.proj");
    blocks_.push_back(std::move(block));
  }
}

GridNet::TemporalState GridNet::temporal_state() const {
  TemporalState s;
  const Index f = cfg_.n_freq, d = cfg_.emb_dim;
  s.history.assign(static_cast<size_t>(cfg_.unfold - 1), RowMatrixXf::Zero(f, d));
  s.outputs.assign(static_cast<size_t>(cfg_.unfold - 1), RowMatrixXf::Zero(f, cfg_.hidden));
  s.h = RowMatrixXf::Zero(f, cfg_.hidden);
  s.c = RowMatrixXf::Zero(f, cfg_.hidden);
  return s;
}

RowMatrixXf GridNet::temporal_step(const TemporalModule& m, TemporalState& s,
                                   const Eigen::Ref<const RowMatrixXf>& frame) const {
  const Index f = cfg_.n_freq, d = cfg_.emb_dim, kernel = cfg_.unfold;
  RowMatrixXf z = frame;
  ln_rows(z, m.ln_gamma.data(), m.ln_beta.data());

  // Unfold over time: frames t-I+1 .. t of each frequency, oldest first.
  RowMatrixXf unfolded(f, d * kernel);
  for (Index i = 0; i + 1 < kernel; ++i) unfolded.middleCols(i * d, d) = s.history[static_cast<size_t>(i)];
  unfolded.rightCols(d) = z;
  m.lstm.step(unfolded, s.h, s.c);

  // Causal transposed conv: out[t] = b + sum_i W_i^T h[t - i].
  RowMatrixXf out(f, d);
  out.rowwise() = m.deconv_bias;
  out.noalias() += s.h * m.deconv[0];
  for (Index i = 1; i < kernel; ++i) out.noalias() += s.outputs[static_cast<size_t>(i - 1)] * m.deconv[static_cast<size_t>(i)];

  if (kernel > 1) {
    s.history.erase(s.history.begin());
    s.history.push_back(std::move(z));
    s.outputs.pop_back();
    s.outputs.insert(s.outputs.begin(), s.h);
  }
  return out;
}

void GridNet::spectral_inplace(const SpectralModule& m, Tensor& x) const {
  const Index frames = x.dim(0), f = cfg_.n_freq, d = cfg_.emb_dim, kernel = cfg_.unfold, hs = cfg_.hidden;
  const Index positions = f + kernel - 1;
  constexpr Index kChunk = 64;
  for (Index t0 = 0; t0 < frames; t0 += kChunk) {
    const Index n = std::min(kChunk, frames - t0);
    std::vector<RowMatrixXf> normalized(static_cast<size_t>(n));
    for (Index r = 0; r < n; ++r) {
      normalized[static_cast<size_t>(r)] = x.frame(t0 + r);
      ln_rows(normalized[static_cast<size_t>(r)], m.ln_gamma.data(), m.ln_beta.data());
    }
    // Position u covers bins u-I+1 .. u (zero outside the band); rows are
    // position-major so each position is a contiguous block of n rows.
    RowMatrixXf inputs = RowMatrixXf::Zero(positions * n, d * kernel);
    for (Index u = 0; u < positions; ++u)
      for (Index i = 0; i < kernel; ++i) {
        const Index bin = u - (kernel - 1) + i;
        if (bin < 0 || bin >= f) continue;
        for (Index r = 0; r < n; ++r)
          inputs.row(u * n + r).segment(i * d, d) = normalized[static_cast<size_t>(r)].row(bin);
      }
    const RowMatrixXf proj_fwd = m.fwd.project(inputs), proj_bwd = m.bwd.project(inputs);
    std::vector<RowMatrixXf> fwd(static_cast<size_t>(positions)), bwd(static_cast<size_t>(positions));
    RowMatrixXf h = RowMatrixXf::Zero(n, hs), c = RowMatrixXf::Zero(n, hs);
    for (Index u = 0; u < positions; ++u) {
      m.fwd.step_projected(proj_fwd.middleRows(u * n, n), h, c);
      fwd[static_cast<size_t>(u)] = h;
    }
    h.setZero();
    c.setZero();
    for (Index u = positions - 1; u >= 0; --u) {
      m.bwd.step_projected(proj_bwd.middleRows(u * n, n), h, c);
      bwd[static_cast<size_t>(u)] = h;
    }
    // Transposed conv over frequency, cropped back to F bins:
    // out[f] = b + sum_i W_i^T g[f + I - 1 - i].
    RowMatrixXf out(n, d);
    for (Index bin = 0; bin < f; ++bin) {
      out.rowwise() = m.deconv_bias;
      for (Index i = 0; i < kernel; ++i) {
        const auto u = static_cast<size_t>(bin + kernel - 1 - i);
        const RowMatrixXf& tap = m.deconv[static_cast<size_t>(i)];
        out.noalias() += fwd[u] * tap.topRows(hs);
        out.noalias() += bwd[u] * tap.bottomRows(hs);
      }
      for (Index r = 0; r < n; ++r) x.frame(t0 + r).row(bin) += out.row(r);
    }
  }
}

void GridNet::project(const Projection& p, Index width, const Eigen::Ref<const RowMatrixXf>& frame,
                      std::span<float> out) const {
  const Index f = cfg_.n_freq, heads = static_cast<Index>(p.prelu.size());
  RowMatrixXf y = frame * p.weight_t;
  y.rowwise() += p.bias;
  for (Index l = 0; l < heads; ++l) {
    auto block = y.middleCols(l * width, width);
    nn::prelu_inplace(block, p.prelu[static_cast<size_t>(l)]);
    ln_block(block, p.ln_gamma.data() + l * f * width, p.ln_beta.data() + l * f * width);
    float* dst = out.data() + l * f * width;
    for (Index bin = 0; bin < f; ++bin)
      for (Index j = 0; j < width; ++j) dst[bin * width + j] = block(bin, j);
  }
}

void GridNet::output_projection(const Projection& p, MatrixMap frame) const {
  RowMatrixXf y = frame * p.weight_t;
  y.rowwise() += p.bias;
  nn::prelu_inplace(y, p.prelu[0]);
  ln_block(y, p.ln_gamma.data(), p.ln_beta.data());
  frame = y;
}

void GridNet::apply_attention_residual(const AttentionModule& m, Tensor& x) const {
  const Index frames = x.dim(0), f = cfg_.n_freq, heads = cfg_.heads, e = cfg_.qk_dim, dv = cfg_.value_dim();
  Tensor q({frames, heads * f * e}), k({frames, heads * f * e}), v({frames, heads * f * dv});
  for (Index t = 0; t < frames; ++t) {
    project(m.q, e, x.frame(t), std::span<float>(q.data() + t * heads * f * e, heads * f * e));
    project(m.k, e, x.frame(t), std::span<float>(k.data() + t * heads * f * e, heads * f * e));
    project(m.v, dv, x.frame(t), std::span<float>(v.data() + t * heads * f * dv, heads * f * dv));
  }
  const Tensor attended = nn::masked_attention(q, k, v, heads, cfg_.causal_attention);
  Tensor frame({1, f, cfg_.emb_dim});
  for (Index t = 0; t < frames; ++t) {
    const float* row = attended.data() + t * heads * f * dv;
    MatrixMap o = frame.frame(0);
    for (Index l = 0; l < heads; ++l)
      for (Index bin = 0; bin < f; ++bin)
        for (Index j = 0; j < dv; ++j) o(bin, l * dv + j) = row[l * f * dv + bin * dv + j];
    output_projection(m.proj, o);
    x.frame(t) += o;
  }
}

Tensor GridNet::subband_temporal(Index block, const Tensor& x) const {
  const auto& m = blocks_.at(static_cast<size_t>(block)).temporal;
  Tensor y(x.shape());
  TemporalState s = temporal_state();
  for (Index t = 0; t < x.dim(0); ++t) y.frame(t) = temporal_step(m, s, x.frame(t));
  return y;
}

Tensor GridNet::intraframe_spectral(Index block, const Tensor& x) const {
  Tensor y = x;
  spectral_inplace(blocks_.at(static_cast<size_t>(block)).spectral, y);
  for (Index i = 0; i < y.size(); ++i) y[i] -= x[i];
  return y;
}

Tensor GridNet::full_band_attention(Index block, const Tensor& x) const {
  Tensor y = x;
  apply_attention_residual(blocks_.at(static_cast<size_t>(block)).attn, y);
  for (Index i = 0; i < y.size(); ++i) y[i] -= x[i];
  return y;
}

Tensor GridNet::forward(const Tensor& input, std::span<const float> embedding) const {
  require(input.rank() == 3 && input.dim(1) == cfg_.n_freq && input.dim(2) == cfg_.input_channels,
          Errc::invalid_shape, "gridnet: input must be [T, " + std::to_string(cfg_.n_freq) + ", " +
                                   std::to_string(cfg_.input_channels) + "], got " + input.shape_string());
  require(static_cast<Index>(embedding.size()) == cfg_.speaker_dim, Errc::invalid_shape,
          "gridnet: embedding must have " + std::to_string(cfg_.speaker_dim) + " values");

  Tensor h = conv_in_.forward(input);
  nn::layer_norm_trailing(h, 2, ln_in_gamma_, ln_in_beta_);
  for (const auto& block : blocks_) {
    if (cfg_.use_film) {
      const auto mod = block.film.modulation(embedding);
      for (Index t = 0; t < h.dim(0); ++t) nn::Film::apply(mod, h.frame(t));
    }
    TemporalState s = temporal_state();
    for (Index t = 0; t < h.dim(0); ++t) {
      RowMatrixXf delta = temporal_step(block.temporal, s, h.frame(t));
      h.frame(t) += delta;
    }
    spectral_inplace(block.spectral, h);
    apply_attention_residual(block.attn, h);
  }
  return conv_out_.forward(h);
}

// ---------------------------------------------------------------- streaming

struct GridNetStream::Block {
  GridNet::TemporalState temporal;
  nn::AttentionCache cache;
};

GridNetStream::GridNetStream(const GridNet& net, std::span<const float> embedding) : net_(&net) {
  const auto& cfg = net.cfg_;
  require(static_cast<Index>(embedding.size()) == cfg.speaker_dim, Errc::invalid_shape,
          "gridnet: embedding must have " + std::to_string(cfg.speaker_dim) + " values");
  in_window_ = Tensor({cfg.conv_time, cfg.n_freq, cfg.input_channels});
  out_window_ = Tensor({cfg.conv_time, cfg.n_freq, cfg.emb_dim});
  for (const auto& block : net.blocks_) {
    if (cfg.use_film) film_.push_back(block.film.modulation(embedding));
    auto state = std::make_shared<Block>();
    state->temporal = net.temporal_state();
    state->cache = nn::AttentionCache(cfg.heads, cfg.n_freq * cfg.qk_dim, cfg.n_freq * cfg.value_dim());
    blocks_.push_back(std::move(state));
  }
}

namespace {

void push_frame(Tensor& window, const Eigen::Ref<const RowMatrixXf>& frame) {
  const Index kt = window.dim(0);
  for (Index t = 0; t + 1 < kt; ++t) window.frame(t) = window.frame(t + 1);
  window.frame(kt - 1) = frame;
}

}  // namespace

RowMatrixXf GridNetStream::step(const Eigen::Ref<const RowMatrixXf>& frame) {
  const GridNet& net = *net_;
  const auto& cfg = net.cfg_;
  require(frame.rows() == cfg.n_freq && frame.cols() == cfg.input_channels, Errc::invalid_shape,
          "gridnet stream: frame must be F x input_channels");
  const Index f = cfg.n_freq, heads = cfg.heads, e = cfg.qk_dim, dv = cfg.value_dim();

  push_frame(in_window_, frame);
  Tensor h({1, f, cfg.emb_dim});
  net.conv_in_.forward_frame(in_window_, cfg.conv_time - 1, h.frame(0));
  nn::layer_norm_trailing(h, 2, net.ln_in_gamma_, net.ln_in_beta_);

  std::vector<float> q(static_cast<size_t>(heads * f * e)), k(q.size()), v(static_cast<size_t>(heads * f * dv)),
      attended(v.size());
  for (size_t b = 0; b < net.blocks_.size(); ++b) {
    const auto& block = net.blocks_[b];
    auto& state = *blocks_[b];
    if (cfg.use_film) nn::Film::apply(film_[b], h.frame(0));
    RowMatrixXf delta = net.temporal_step(block.temporal, state.temporal, h.frame(0));
    h.frame(0) += delta;
    net.spectral_inplace(block.spectral, h);

    net.project(block.attn.q, e, h.frame(0), q);
    net.project(block.attn.k, e, h.frame(0), k);
    net.project(block.attn.v, dv, h.frame(0), v);
    state.cache.append(k, v);
    state.cache.attend(q, attended);
    Tensor o({1, f, cfg.emb_dim});
    MatrixMap om = o.frame(0);
    for (Index l = 0; l < heads; ++l)
      for (Index bin = 0; bin < f; ++bin)
        for (Index j = 0; j < dv; ++j) om(bin, l * dv + j) = attended[static_cast<size_t>(l * f * dv + bin * dv + j)];
    net.output_projection(block.attn.proj, om);
    h.frame(0) += om;
  }

  push_frame(out_window_, h.frame(0));
  RowMatrixXf out(f, 2);
  Tensor y({1, f, 2});
  net.conv_out_.forward_frame(out_window_, cfg.conv_time - 1, y.frame(0));
  out = y.frame(0);
  ++frames_;
  return out;
}

dsp::ComplexSpectrogram<double> model_forward(const GridNet& net, const Tensor& stacked_input,
                                              std::span<const float> embedding) {
  const Index pad = net.config().lookahead;
  require(stacked_input.rank() == 3, Errc::invalid_shape, "model_forward: expected [T, F, C]");
  Tensor padded({stacked_input.dim(0) + pad, stacked_input.dim(1), stacked_input.dim(2)});
  std::copy(stacked_input.values().begin(), stacked_input.values().end(),
            padded.data() + pad * stacked_input.dim(1) * stacked_input.dim(2));
  return unstack_ri(net.forward(padded, embedding));
}

}  // namespace hearx::gridnet

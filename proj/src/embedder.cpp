#include "hearx/spk/embedder.hpp"

#include <cmath>

namespace hearx::spk {

using nn::Init;
using nn::ParamSpec;
using nn::RowMatrixXf;

namespace {

constexpr Index kKernel = 3;

void add_conv(std::vector<ParamSpec>& out, const std::string& name, Index cout, Index cin) {
  const Index fan = cin * kKernel * kKernel;
  out.push_back({name + ".weight", {cout, cin, kKernel, kKernel}, Init::uniform, fan});
  out.push_back({name + ".bias", {cout}, Init::uniform, fan});
  out.push_back({name + ".prelu", {1}, Init::constant, 1, 0.25f});
}

void add_linear(std::vector<ParamSpec>& out, const std::string& name, Index cout, Index cin) {
  out.push_back({name + ".weight", {cout, cin}, Init::uniform, cin});
  out.push_back({name + ".bias", {cout}, Init::uniform, cin});
}

std::string tcn_name(Index r, Index b) {
  return std::string(kPrefix) + ".tcn" + std::to_string(r) + "." + std::to_string(b);
}

void add_tcn(std::vector<ParamSpec>& out, const EmbedConfig& cfg) {
  const Index c = cfg.tcn_channels;
  for (Index r = 0; r < cfg.tcn_repeats; ++r)
    for (Index b = 0; b < cfg.tcn_blocks; ++b) {
      const std::string n = tcn_name(r, b);
      add_linear(out, n + ".in", c, c);
      out.push_back({n + ".prelu1", {1}, Init::constant, 1, 0.25f});
      out.push_back({n + ".ln1.gamma", {c}, Init::ones});
      out.push_back({n + ".ln1.beta", {c}, Init::zeros});
      out.push_back({n + ".dconv.weight", {c, kKernel}, Init::uniform, kKernel});
      out.push_back({n + ".dconv.bias", {c}, Init::uniform, kKernel});
      out.push_back({n + ".prelu2", {1}, Init::constant, 1, 0.25f});
      out.push_back({n + ".ln2.gamma", {c}, Init::ones});
      out.push_back({n + ".ln2.beta", {c}, Init::zeros});
      add_linear(out, n + ".out", c, c);
    }
}

RowMatrixXf transposed(const Tensor& w) { return w.matrix(w.dim(0), w.dim(1)).transpose(); }
Eigen::RowVectorXf row_vector(const Tensor& t) { return Eigen::Map<const Eigen::RowVectorXf>(t.data(), t.size()); }

void ln_rows(RowMatrixXf& m, const Eigen::RowVectorXf& gamma, const Eigen::RowVectorXf& beta) {
  constexpr double kEps = 1e-5;
  const Index n = m.cols();
  for (Index r = 0; r < m.rows(); ++r) {
    double sum = 0.0, sq = 0.0;
    for (Index i = 0; i < n; ++i) sum += m(r, i);
    const double mean = sum / static_cast<double>(n);
    for (Index i = 0; i < n; ++i) sq += (m(r, i) - mean) * (m(r, i) - mean);
    const double inv = 1.0 / std::sqrt(sq / static_cast<double>(n) + kEps);
    for (Index i = 0; i < n; ++i) m(r, i) = static_cast<float>((m(r, i) - mean) * inv) * gamma[i] + beta[i];
  }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Index t = a.dim(0), f = a.dim(1), ca = a.dim(2), cb = b.dim(2);
  Tensor out({t, f, ca + cb});
  for (Index i = 0; i < t; ++i) {
    auto o = out.frame(i);
    o.leftCols(ca) = a.frame(i);
    o.rightCols(cb) = b.frame(i);
  }
  return out;
}

}  // namespace

EmbedConfig EmbedConfig::toy() {
  EmbedConfig c;
  c.dense_layers = 1;
  c.tcn_repeats = 1;
  c.tcn_blocks = 2;
  return c;
}

EmbedConfig EmbedConfig::full_size() { return EmbedConfig{}; }

Index EmbedConfig::encoded_freq() const {
  Index f = n_freq;
  for (Index i = 0; i < downsamples; ++i) f = (f - 1) / 2 + 1;
  return f;
}

void EmbedConfig::validate() const {
  require(hidden >= 1 && downsamples >= 0 && dense_layers >= 0 && tcn_repeats >= 0 && tcn_blocks >= 0 && n_freq >= 1,
          Errc::invalid_config, "embedder: sizes must be non-negative");
  require(tcn_channels == kEmbeddingDim, Errc::invalid_config, "embedder: TCN channels must equal 128");
}

std::vector<float> EmbedConfig::to_hparams() const {
  return {static_cast<float>(hidden),      static_cast<float>(downsamples), static_cast<float>(dense_layers),
          static_cast<float>(tcn_repeats), static_cast<float>(tcn_blocks),  static_cast<float>(tcn_channels),
          static_cast<float>(n_freq)};
}

EmbedConfig EmbedConfig::from_hparams(const Tensor& h) {
  require(h.size() == 7, Errc::format_error, "embedder: hparams record must have 7 entries");
  auto at = [&](Index i) { return static_cast<Index>(std::lround(h[i])); };
  EmbedConfig c;
  c.hidden = at(0);
  c.downsamples = at(1);
  c.dense_layers = at(2);
  c.tcn_repeats = at(3);
  c.tcn_blocks = at(4);
  c.tcn_channels = at(5);
  c.n_freq = at(6);
  c.validate();
  return c;
}

std::vector<ParamSpec> parameter_specs(const EmbedConfig& cfg) {
  // Shape checks only; the embedding width itself is validated on use.
  require(cfg.tcn_channels >= 1, Errc::invalid_config, "embedder: TCN channels must be positive");
  const std::string p = kPrefix;
  const Index h = cfg.hidden;
  std::vector<ParamSpec> out;
  add_conv(out, p + ".conv_in", h, 2);
  for (Index s = 0; s < cfg.downsamples; ++s) {
    const std::string st = p + ".down" + std::to_string(s);
    add_conv(out, st + ".conv", h, h);
    for (Index l = 0; l < cfg.dense_layers; ++l) add_conv(out, st + ".dense" + std::to_string(l), h, h * (l + 1));
    add_linear(out, st + ".transition", h, h * (cfg.dense_layers + 1));
  }
  add_linear(out, p + ".proj", cfg.tcn_channels, h * cfg.encoded_freq());
  add_tcn(out, cfg);
  return out;
}

Index embed_param_count(const EmbedConfig& cfg) { return nn::count_parameters(parameter_specs(cfg)); }

Index tcn_param_count(const EmbedConfig& cfg) {
  std::vector<ParamSpec> specs;
  add_tcn(specs, cfg);
  return nn::count_parameters(specs);
}

nn::WeightStore init_weights(const EmbedConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::WeightStore store = nn::init_weights(parameter_specs(cfg), seed);
  const auto hp = cfg.to_hparams();
  store.set(std::string(kPrefix) + ".hparams", Tensor({static_cast<Index>(hp.size())}, hp));
  return store;
}

EmbedConfig config_from_store(const nn::WeightStore& store) {
  return EmbedConfig::from_hparams(store.get(std::string(kPrefix) + ".hparams"));
}

Embedder::Embedder(const EmbedConfig& cfg, const nn::WeightStore& store) : cfg_(cfg) {
  cfg_.validate();
  nn::check_weights(store, parameter_specs(cfg_));
  auto w = [&](const std::string& n) -> const Tensor& { return store.get(std::string(kPrefix) + "." + n); };
  auto conv = [&](const std::string& n, Index stride) {
    return Conv{nn::Conv2d(w(n + ".weight"), w(n + ".bias"), nn::TimePadding::centered, stride), w(n + ".prelu")[0]};
  };

  conv_in_ = conv("conv_in", 1);
  for (Index s = 0; s < cfg_.downsamples; ++s) {
    const std::string st = "down" + std::to_string(s);
    DownStage stage;
    stage.down = conv(st + ".conv", 2);
    for (Index l = 0; l < cfg_.dense_layers; ++l) stage.dense.push_back(conv(st + ".dense" + std::to_string(l), 1));
    stage.transition_t = transposed(w(st + ".transition.weight"));
    stage.transition_bias = row_vector(w(st + ".transition.bias"));
    stages_.push_back(std::move(stage));
  }
  proj_t_ = transposed(w("proj.weight"));
  proj_bias_ = row_vector(w("proj.bias"));

  for (Index r = 0; r < cfg_.tcn_repeats; ++r)
    for (Index b = 0; b < cfg_.tcn_blocks; ++b) {
      const std::string n = tcn_name(r, b).substr(std::string(kPrefix).size() + 1);
      TcnBlock blk;
      blk.dilation = Index{1} << b;
      blk.in_t = transposed(w(n + ".in.weight"));
      blk.in_bias = row_vector(w(n + ".in.bias"));
      blk.out_t = transposed(w(n + ".out.weight"));
      blk.out_bias = row_vector(w(n + ".out.bias"));
      blk.prelu1 = w(n + ".prelu1")[0];
      blk.prelu2 = w(n + ".prelu2")[0];
      blk.ln1_gamma = row_vector(w(n + ".ln1.gamma"));
      blk.ln1_beta = row_vector(w(n + ".ln1.beta"));
      blk.ln2_gamma = row_vector(w(n + ".ln2.gamma"));
      blk.ln2_beta = row_vector(w(n + ".ln2.beta"));
      blk.dconv = transposed(w(n + ".dconv.weight"));
      blk.dconv_bias = row_vector(w(n + ".dconv.bias"));
      tcn_.push_back(std::move(blk));
    }
}

Tensor Embedder::encode(const dsp::ComplexSpectrogram<double>& adaptation) const {
  require(adaptation.frames() >= 1, Errc::invalid_input, "embedder: adaptation input has no frames");
  require(adaptation.channels() == 1 && adaptation.bins() == cfg_.n_freq, Errc::invalid_shape,
          "embedder: expected a single-channel spectrogram with " + std::to_string(cfg_.n_freq) + " bins");
  const Index frames = adaptation.frames();
  Tensor x({frames, cfg_.n_freq, 2});
  for (Index t = 0; t < frames; ++t)
    for (Index f = 0; f < cfg_.n_freq; ++f) {
      x.frame(t)(f, 0) = static_cast<float>(adaptation(t, f, 0).real());
      x.frame(t)(f, 1) = static_cast<float>(adaptation(t, f, 0).imag());
    }
  auto run = [](const Conv& c, const Tensor& in) {
    Tensor y = c.conv.forward(in);
    nn::prelu_inplace(y.matrix(), c.prelu);
    return y;
  };

  x = run(conv_in_, x);
  for (const auto& stage : stages_) {
    Tensor feats = run(stage.down, x);
    for (const auto& layer : stage.dense) feats = concat_channels(feats, run(layer, feats));
    x = Tensor({feats.dim(0), feats.dim(1), cfg_.hidden});
    for (Index t = 0; t < frames; ++t) {
      auto o = x.frame(t);
      o.noalias() = feats.frame(t) * stage.transition_t;
      o.rowwise() += stage.transition_bias;
    }
  }
  const Index width = x.dim(1) * x.dim(2);
  Tensor z({frames, cfg_.tcn_channels});
  auto zm = z.matrix();
  zm.noalias() = x.matrix(frames, width) * proj_t_;
  zm.rowwise() += proj_bias_;
  return z;
}

Tensor Embedder::frame_features(const dsp::ComplexSpectrogram<double>& adaptation) const {
  Tensor z = encode(adaptation);
  const Index frames = z.dim(0), c = cfg_.tcn_channels;
  auto zm = z.matrix();
  RowMatrixXf u(frames, c), v(frames, c);
  for (const auto& blk : tcn_) {
    u.noalias() = zm * blk.in_t;
    u.rowwise() += blk.in_bias;
    nn::prelu_inplace(u, blk.prelu1);
    ln_rows(u, blk.ln1_gamma, blk.ln1_beta);
    // Depthwise dilated conv, centered: v[t] = b + sum_j k_j * u[t + (j - 1) d].
    v.rowwise() = blk.dconv_bias;
    for (Index j = 0; j < kKernel; ++j) {
      const Index shift = (j - kKernel / 2) * blk.dilation;
      for (Index t = 0; t < frames; ++t) {
        const Index s = t + shift;
        if (s >= 0 && s < frames) v.row(t) += u.row(s).cwiseProduct(blk.dconv.row(j));
      }
    }
    nn::prelu_inplace(v, blk.prelu2);
    ln_rows(v, blk.ln2_gamma, blk.ln2_beta);
    zm.noalias() += v * blk.out_t;
    zm.rowwise() += blk.out_bias;
  }
  return z;
}

std::vector<float> Embedder::extract(const dsp::ComplexSpectrogram<double>& adaptation) const {
  const Tensor z = frame_features(adaptation);
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(cfg_.tcn_channels);
  for (Index t = 0; t < z.dim(0); ++t) sum += z.matrix().row(t).cast<double>();
  sum /= static_cast<double>(z.dim(0));
  std::vector<float> e(static_cast<size_t>(cfg_.tcn_channels));
  for (Index i = 0; i < cfg_.tcn_channels; ++i) e[static_cast<size_t>(i)] = static_cast<float>(sum[i]);
  return e;
}

std::vector<float> embedding_from_store(const nn::WeightStore& store) {
  require(store.contains(kEmbeddingName), Errc::format_error, "embedding file lacks 'spk.embedding'");
  const Tensor& t = store.get(kEmbeddingName);
  require(t.rank() == 1 && t.size() == kEmbeddingDim, Errc::format_error,
          "embedding must be a vector of 128 values, got " + t.shape_string());
  require(t.all_finite(), Errc::format_error, "embedding has non-finite values");
  return {t.values().begin(), t.values().end()};
}

void save_embedding(const std::filesystem::path& path, const std::vector<float>& embedding) {
  require(static_cast<Index>(embedding.size()) == kEmbeddingDim, Errc::invalid_shape, "embedding must have 128 values");
  nn::WeightStore store;
  store.set(kEmbeddingName, Tensor({kEmbeddingDim}, embedding));
  store.save(path);
}

std::vector<float> load_embedding(const std::filesystem::path& path) {
  return embedding_from_store(nn::WeightStore::load(path));
}

}  // namespace hearx::spk

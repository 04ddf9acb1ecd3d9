#include "hearx/pipeline/pipeline.hpp"

#include <deque>
#include <functional>

#include "json.hpp"

namespace hearx::pipeline {

using dsp::ComplexSpectrogram;
using dsp::ComplexVector;
using dsp::FrameMatrix;

// ---------------------------------------------------------------- config

void PipelineConfig::validate() const {
  require(iterations >= 1, Errc::invalid_config, "pipeline: iterations must be >= 1");
  require(reference_channel >= 0, Errc::invalid_config, "pipeline: reference channel must be non-negative");
  stft.validate();
  mcwf.validate();
  drc.validate();
}

PipelineConfig PipelineConfig::from_json_text(const std::string& text, PipelineConfig cfg) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(Errc::invalid_config, std::string("config: ") + e.what());
  }
  require(j.is_object(), Errc::invalid_config, "config: top level must be an object");
  auto number = [](const json& v, const std::string& key) {
    require(v.is_number(), Errc::invalid_config, "config: '" + key + "' must be a number");
    return v.get<double>();
  };
  auto integer = [](const json& v, const std::string& key) {
    require(v.is_number_integer(), Errc::invalid_config, "config: '" + key + "' must be an integer");
    return v.get<Index>();
  };
  auto boolean = [](const json& v, const std::string& key) {
    require(v.is_boolean(), Errc::invalid_config, "config: '" + key + "' must be a boolean");
    return v.get<bool>();
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "reference_channel") {
      cfg.reference_channel = integer(v, key);
    } else if (key == "iterations") {
      cfg.iterations = integer(v, key);
    } else if (key == "enable_fitting") {
      cfg.enable_fitting = boolean(v, key);
    } else if (key == "clamp_negative_gains") {
      cfg.clamp_negative_gains = boolean(v, key);
    } else if (key == "ear") {
      require(v == "left" || v == "right", Errc::invalid_config, "config: 'ear' must be \"left\" or \"right\"");
      cfg.ear = v == "left" ? Ear::left : Ear::right;
    } else if (key == "mcwf") {
      require(v.is_object(), Errc::invalid_config, "config: 'mcwf' must be an object");
      for (const auto& [k, x] : v.items()) {
        if (k == "alpha") cfg.mcwf.alpha = number(x, k);
        else if (k == "loading") cfg.mcwf.loading = number(x, k);
        else fail(Errc::invalid_config, "config: unknown key 'mcwf." + k + "'");
      }
    } else if (key == "drc") {
      require(v.is_object(), Errc::invalid_config, "config: 'drc' must be an object");
      for (const auto& [k, x] : v.items()) {
        if (k == "threshold_db") cfg.drc.threshold_db = number(x, k);
        else if (k == "ratio") cfg.drc.ratio = number(x, k);
        else if (k == "knee_db") cfg.drc.knee_db = number(x, k);
        else if (k == "attack_s") cfg.drc.attack_s = number(x, k);
        else if (k == "release_s") cfg.drc.release_s = number(x, k);
        else if (k == "aux_level_db") cfg.drc.aux_level_db = number(x, k);
        else fail(Errc::invalid_config, "config: unknown key 'drc." + k + "'");
      }
    } else {
      fail(Errc::invalid_config, "config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- rescale

void RescaleState::update(const Eigen::Ref<const ComplexVector<double>>& bf,
                          const Eigen::Ref<const ComplexVector<double>>& est) {
  require(bf.size() == est.size(), Errc::invalid_shape, "rescale: frame sizes differ");
  // est.dot(bf) = sum conj(est) bf; its real part equals Re(bf conj(est)).
  numerator_ += est.dot(bf).real();
  denominator_ += est.squaredNorm();
}

ComplexVector<double> rescale_step(RescaleState& state, const Eigen::Ref<const ComplexVector<double>>& bf,
                                   const Eigen::Ref<const ComplexVector<double>>& est) {
  state.update(bf, est);
  return state.gain() * est;
}

// ---------------------------------------------------------------- models

Models::Models(const nn::WeightStore& store) {
  const auto c1 = gridnet::config_from_store(store, "dnn1");
  const auto c2 = gridnet::config_from_store(store, "dnn2");
  channels_ = c1.input_channels / 2;
  require(c2.input_channels == c1.input_channels + 4, Errc::configuration,
          "weights: dnn2 must take the dnn1 input plus two estimate channels (RI)");
  require(c1.n_freq == c2.n_freq && c1.lookahead == c2.lookahead && c1.speaker_dim == c2.speaker_dim,
          Errc::configuration, "weights: dnn1 and dnn2 disagree on frequency bins, lookahead or embedding size");
  dnn1_ = std::make_unique<gridnet::GridNet>(c1, store, "dnn1");
  dnn2_ = std::make_unique<gridnet::GridNet>(c2, store, "dnn2");
  if (store.contains(std::string(spk::kPrefix) + ".hparams"))
    embedder_ = std::make_unique<spk::Embedder>(spk::config_from_store(store), store);
}

const spk::Embedder& Models::embedder() const {
  require(embedder_ != nullptr, Errc::configuration, "weights: no speaker embedder in this weight file");
  return *embedder_;
}

nn::WeightStore init_system_weights(Index channels, std::uint64_t seed, bool full_size) {
  require(channels >= 1, Errc::invalid_config, "init: need at least one channel");
  const auto c1 = full_size ? gridnet::GridNetConfig::full_size(channels) : gridnet::GridNetConfig::toy(channels);
  const auto c2 =
      full_size ? gridnet::GridNetConfig::full_size(channels, true) : gridnet::GridNetConfig::toy(channels, true);
  nn::WeightStore store = gridnet::init_weights(c1, "dnn1", seed);
  store.merge(gridnet::init_weights(c2, "dnn2", seed + 1));
  store.merge(spk::init_weights(full_size ? spk::EmbedConfig::full_size() : spk::EmbedConfig::toy(), seed + 2));
  return store;
}

namespace {

ComplexVector<double> to_complex(const nn::RowMatrixXf& ri) {
  ComplexVector<double> out(ri.rows());
  for (Index f = 0; f < ri.rows(); ++f) out[f] = {ri(f, 0), ri(f, 1)};
  return out;
}

ComplexVector<double> column(const ComplexSpectrogram<double>& s, Index t) { return s.frame(t).col(0); }

// Reference channel first, the others in their original order.
std::vector<Index> channel_order(Index channels, Index reference) {
  std::vector<Index> order{reference};
  for (Index c = 0; c < channels; ++c)
    if (c != reference) order.push_back(c);
  return order;
}

SignalMatrix<double> reorder(const Eigen::Ref<const SignalMatrix<double>>& x, const std::vector<Index>& order) {
  SignalMatrix<double> out(x.rows(), x.cols());
  for (size_t c = 0; c < order.size(); ++c) out.col(static_cast<Index>(c)) = x.col(order[c]);
  return out;
}

void check_setup(const Models& models, const std::vector<float>& embedding, const PipelineConfig& cfg,
                 Index input_channels) {
  cfg.validate();
  const auto& mc = models.dnn1().config();
  require(input_channels == models.channels(), Errc::configuration,
          "input has " + std::to_string(input_channels) + " channels, weights expect " +
              std::to_string(models.channels()));
  require(cfg.reference_channel < input_channels, Errc::configuration, "reference channel out of range");
  require(mc.n_freq == cfg.stft.bins() && mc.lookahead == cfg.stft.lookahead, Errc::configuration,
          "weights do not match the STFT configuration");
  require(static_cast<Index>(embedding.size()) == mc.speaker_dim, Errc::invalid_shape,
          "embedding must have " + std::to_string(mc.speaker_dim) + " values");
}

// Synthesizes tap frames on the output schedule: frame_at(j) is the frame
// emitted at synthesis index j, and only indices j >= P reach the output.
Eigen::VectorXd resynthesize(const std::function<ComplexVector<double>(Index)>& frame_at, Index frames,
                             const dsp::StftConfig& cfg) {
  const Index hop = cfg.hop, lookahead = cfg.lookahead;
  dsp::StreamingStft<double> synth(cfg, 1);
  for (Index j = 0; j < lookahead; ++j) synth.synthesize_step(frame_at(j), j);
  const SignalMatrix<double> silence = SignalMatrix<double>::Zero(hop, 1);
  Eigen::VectorXd out(frames * hop);
  for (Index k = 0; k < frames; ++k) {
    synth.analyze_step(silence);
    out.segment(k * hop, hop) = synth.synthesize_step(frame_at(k + lookahead), k + lookahead);
  }
  return out;
}

std::optional<fitting::FittingChain> make_fitting(const PipelineConfig& cfg,
                                                  const std::optional<fitting::NalrPrescription>& prescription) {
  if (!cfg.enable_fitting || !prescription) return std::nullopt;
  return fitting::FittingChain(*prescription, cfg.drc, dsp::sqrt_hann<double>(cfg.stft.win));
}

}  // namespace

// ---------------------------------------------------------------- streaming

struct StreamingPipeline::State {
  struct Stage {
    beamform::Mcwf<double> mcwf;
    gridnet::GridNetStream dnn2;
    std::deque<ComplexVector<double>> estimates;  // unscaled, frames k .. k+P
  };

  PipelineConfig cfg;
  std::vector<Index> order;
  dsp::StreamingStft<double> stft;
  gridnet::GridNetStream dnn1;
  std::deque<ComplexVector<double>> s1;  // frames k .. k+P
  std::vector<Stage> stages;
  RescaleState rescale;
  std::optional<fitting::FittingChain> fit;
  SignalMatrix<double> pending;
  Index frame = 0;  // next real analysis frame
  nn::RowMatrixXf input1, input2;
  std::vector<dsp::StreamingStft<double>> taps;  // empty unless probing
  SignalMatrix<double> tap_block;                // last hop of every tap

  State(const Models& models, const std::vector<float>& embedding, const PipelineConfig& c,
        const std::optional<fitting::NalrPrescription>& prescription)
      : cfg(c), order(channel_order(models.channels(), c.reference_channel)), stft(c.stft, models.channels()),
        dnn1(models.dnn1().stream(embedding)), fit(make_fitting(c, prescription)),
        pending(0, models.channels()) {
    const Index bins = c.stft.bins(), lookahead = c.stft.lookahead;
    input1 = nn::RowMatrixXf::Zero(bins, models.dnn1().config().input_channels);
    input2 = nn::RowMatrixXf::Zero(bins, models.dnn2().config().input_channels);
    for (Index i = 0; i < c.iterations; ++i)
      stages.push_back({beamform::Mcwf<double>(bins, models.channels(), c.mcwf), models.dnn2().stream(embedding), {}});

    // The first P target frames come from the zero left-padding.
    for (Index j = 0; j < lookahead; ++j) {
      s1.push_back(to_complex(dnn1.step(input1)));
      for (auto& st : stages) st.estimates.push_back(to_complex(st.dnn2.step(input2)));
      ComplexVector<double> out = rescale.gain() * stages.back().estimates.back();
      if (fit) fit->process(out);
      stft.synthesize_step(out, j);
    }
  }

  // Must run right after construction: replays the primed frames into one
  // synthesizer per internal signal.
  void enable_probe() {
    const Index bins = cfg.stft.bins(), lookahead = cfg.stft.lookahead;
    taps.assign(1 + 2 * stages.size(), dsp::StreamingStft<double>(cfg.stft, 1));
    tap_block.resize(cfg.stft.hop, static_cast<Index>(taps.size()));
    const ComplexVector<double> zero = ComplexVector<double>::Zero(bins);
    for (Index j = 0; j < lookahead; ++j) {
      const auto u = static_cast<size_t>(j);
      taps[0].synthesize_step(s1[u], j);
      for (size_t i = 0; i < stages.size(); ++i) {
        taps[1 + 2 * i].synthesize_step(zero, j);
        taps[2 + 2 * i].synthesize_step(stages[i].estimates[u], j);
      }
    }
  }

  void emit_tap(size_t tap, const ComplexVector<double>& f) {
    taps[tap].analyze_step(SignalMatrix<double>::Zero(cfg.stft.hop, 1));
    tap_block.col(static_cast<Index>(tap)) = taps[tap].synthesize_step(f, frame + cfg.stft.lookahead);
  }

  Eigen::VectorXd step(const SignalMatrix<double>& block) {
    const FrameMatrix<double> y = stft.analyze_step(block);
    gridnet::stack_ri_frame(y, {}, nn::MatrixMap(input1.data(), input1.rows(), input1.cols()));
    s1.push_back(to_complex(dnn1.step(input1)));
    if (!taps.empty()) emit_tap(0, s1.back());

    ComplexVector<double> previous = s1.front();
    for (size_t i = 0; i < stages.size(); ++i) {
      auto& st = stages[i];
      const ComplexVector<double> bf = st.mcwf.process(y, previous);
      const ComplexVector<double>* extras[] = {&previous, &bf};
      gridnet::stack_ri_frame(y, extras, nn::MatrixMap(input2.data(), input2.rows(), input2.cols()));
      st.estimates.push_back(to_complex(st.dnn2.step(input2)));
      if (!taps.empty()) {
        emit_tap(1 + 2 * i, bf);
        emit_tap(2 + 2 * i, st.estimates.back());
      }
      if (i + 1 == stages.size()) rescale.update(bf, st.estimates.front());
      previous = st.estimates.front();
      st.estimates.pop_front();
    }
    s1.pop_front();

    ComplexVector<double> out = rescale.gain() * stages.back().estimates.back();
    if (fit) fit->process(out);
    Eigen::VectorXd samples = stft.synthesize_step(out, frame + cfg.stft.lookahead);
    ++frame;
    return samples;
  }
};

StreamingPipeline::StreamingPipeline(const Models& models, std::vector<float> embedding, const PipelineConfig& cfg,
                                     std::optional<fitting::NalrPrescription> prescription) {
  check_setup(models, embedding, cfg, models.channels());
  state_ = std::make_unique<State>(models, embedding, cfg, prescription);
}

StreamingPipeline::~StreamingPipeline() = default;
StreamingPipeline::StreamingPipeline(StreamingPipeline&&) noexcept = default;

Index StreamingPipeline::frames_processed() const { return state_->frame; }

Eigen::VectorXd StreamingPipeline::process(const Eigen::Ref<const SignalMatrix<double>>& block) {
  auto& s = *state_;
  require(block.cols() == s.pending.cols(), Errc::invalid_input, "pipeline: block has the wrong channel count");
  require(block.allFinite(), Errc::invalid_input, "pipeline: non-finite input samples");
  const Index hop = s.cfg.stft.hop;
  SignalMatrix<double> buffered(s.pending.rows() + block.rows(), block.cols());
  buffered << s.pending, reorder(block, s.order);
  const Index steps = buffered.rows() / hop;
  Eigen::VectorXd out(steps * hop);
  for (Index i = 0; i < steps; ++i) out.segment(i * hop, hop) = s.step(buffered.middleRows(i * hop, hop));
  s.pending = buffered.bottomRows(buffered.rows() - steps * hop);
  return out;
}

// ---------------------------------------------------------------- offline

namespace {

// With `taps`, also resynthesizes the internal signals in probe() column order.
Eigen::VectorXd enhance_offline(const Models& models, const std::vector<float>& embedding,
                                const SignalMatrix<double>& padded, const PipelineConfig& cfg,
                                const std::optional<fitting::NalrPrescription>& prescription,
                                SignalMatrix<double>* taps = nullptr) {
  const Index hop = cfg.stft.hop, lookahead = cfg.stft.lookahead;
  const ComplexSpectrogram<double> y = dsp::stft<double>(padded, cfg.stft);
  const Index frames = y.frames(), bins = y.bins();
  auto head = [&](const ComplexSpectrogram<double>& s) {
    ComplexSpectrogram<double> out(frames, bins, 1);
    for (Index t = 0; t < frames; ++t) out.frame(t) = s.frame(t);
    return out;
  };

  if (taps) taps->resize(frames * hop, 1 + 2 * cfg.iterations);
  // Target frame j sits at synthesis index j; beamformer frame k at k + P.
  auto tap_target = [&](Index col, const ComplexSpectrogram<double>& s) {
    if (taps) taps->col(col) = resynthesize([&](Index j) { return column(s, j); }, frames, cfg.stft);
  };
  auto tap_emitted = [&](Index col, const ComplexSpectrogram<double>& s) {
    if (!taps) return;
    taps->col(col) = resynthesize(
        [&](Index j) { return j < lookahead ? ComplexVector<double>::Zero(bins) : column(s, j - lookahead); }, frames,
        cfg.stft);
  };

  ComplexSpectrogram<double> estimate = gridnet::model_forward(models.dnn1(), gridnet::stack_ri(y), embedding);
  tap_target(0, estimate);
  ComplexSpectrogram<double> bf(frames, bins, 1);
  for (Index i = 0; i < cfg.iterations; ++i) {
    const ComplexSpectrogram<double> previous = head(estimate);
    beamform::Mcwf<double> mcwf(bins, y.channels(), cfg.mcwf);
    for (Index t = 0; t < frames; ++t) bf.frame(t).col(0) = mcwf.process(y.frame(t), column(previous, t));
    const ComplexSpectrogram<double>* extras[] = {&previous, &bf};
    estimate = gridnet::model_forward(models.dnn2(), gridnet::stack_ri(y, extras), embedding);
    tap_emitted(1 + 2 * i, bf);
    tap_target(2 + 2 * i, estimate);
  }

  RescaleState rescale;
  auto fit = make_fitting(cfg, prescription);
  dsp::StreamingStft<double> synth(cfg.stft, 1);
  auto emit = [&](Index j) {
    ComplexVector<double> out = rescale.gain() * column(estimate, j);
    if (fit) fit->process(out);
    return synth.synthesize_step(out, j);
  };
  for (Index j = 0; j < lookahead; ++j) emit(j);
  Eigen::VectorXd out(frames * hop);
  const SignalMatrix<double> silence = SignalMatrix<double>::Zero(hop, 1);
  for (Index k = 0; k < frames; ++k) {
    synth.analyze_step(silence);  // advances the consumed-sample counter
    rescale.update(column(bf, k), column(estimate, k));
    out.segment(k * hop, hop) = emit(k + lookahead);
  }
  return out;
}

SignalMatrix<double> pad_to_hop(const Eigen::Ref<const SignalMatrix<double>>& x, Index hop) {
  const Index n = (x.rows() + hop - 1) / hop * hop;
  SignalMatrix<double> out = SignalMatrix<double>::Zero(n, x.cols());
  out.topRows(x.rows()) = x;
  return out;
}

}  // namespace

Eigen::VectorXd enhance(const Models& models, const std::vector<float>& embedding,
                        const Eigen::Ref<const SignalMatrix<double>>& input, const PipelineConfig& cfg,
                        const std::optional<fitting::NalrPrescription>& prescription, Mode mode) {
  check_setup(models, embedding, cfg, input.cols());
  require(input.allFinite(), Errc::invalid_input, "pipeline: non-finite input samples");
  const SignalMatrix<double> padded = pad_to_hop(input, cfg.stft.hop);
  Eigen::VectorXd out;
  if (mode == Mode::streaming) {
    StreamingPipeline p(models, embedding, cfg, prescription);
    out = p.process(padded);
  } else {
    out = enhance_offline(models, embedding, reorder(padded, channel_order(input.cols(), cfg.reference_channel)), cfg,
                          prescription);
  }
  return out.head(input.rows());
}

Index probe_taps(const PipelineConfig& cfg) { return 2 + 2 * cfg.iterations; }

SignalMatrix<double> probe(const Models& models, const std::vector<float>& embedding,
                           const Eigen::Ref<const SignalMatrix<double>>& input, const PipelineConfig& cfg,
                           const std::optional<fitting::NalrPrescription>& prescription, Mode mode) {
  check_setup(models, embedding, cfg, input.cols());
  require(input.allFinite(), Errc::invalid_input, "pipeline: non-finite input samples");
  const Index hop = cfg.stft.hop;
  const SignalMatrix<double> padded =
      reorder(pad_to_hop(input, hop), channel_order(input.cols(), cfg.reference_channel));
  SignalMatrix<double> out(padded.rows(), probe_taps(cfg));
  if (mode == Mode::streaming) {
    StreamingPipeline p(models, embedding, cfg, prescription);
    auto& s = *p.state_;
    s.enable_probe();
    for (Index k = 0; k < padded.rows() / hop; ++k) {
      out.block(k * hop, 0, hop, 1) = s.step(padded.middleRows(k * hop, hop));
      out.block(k * hop, 1, hop, out.cols() - 1) = s.tap_block;
    }
  } else {
    SignalMatrix<double> taps;
    out.col(0) = enhance_offline(models, embedding, padded, cfg, prescription, &taps);
    out.rightCols(out.cols() - 1) = taps;
  }
  return out.topRows(input.rows());
}

Eigen::VectorXd beamform_with_estimate(const Eigen::Ref<const SignalMatrix<double>>& input,
                                       const Eigen::Ref<const Eigen::VectorXd>& target_estimate,
                                       const PipelineConfig& cfg) {
  cfg.validate();
  require(target_estimate.size() == input.rows(), Errc::invalid_input, "beamform: estimate length must match input");
  const Index hop = cfg.stft.hop, lookahead = cfg.stft.lookahead;
  const SignalMatrix<double> padded = pad_to_hop(input, hop);
  const SignalMatrix<double> target = pad_to_hop(target_estimate, hop);
  const auto y = dsp::stft<double>(reorder(padded, channel_order(input.cols(), cfg.reference_channel)), cfg.stft);
  const auto s = dsp::stft<double>(target, cfg.stft);
  beamform::Mcwf<double> mcwf(y.bins(), y.channels(), cfg.mcwf);
  dsp::StreamingStft<double> synth(cfg.stft, 1);
  const SignalMatrix<double> silence = SignalMatrix<double>::Zero(hop, 1);
  // Analysis frame k resubmitted as target frame k + P comes out P hops late;
  // P trailing silent frames flush the tail.
  const Index frames = y.frames();
  Eigen::VectorXd delayed((frames + lookahead) * hop);
  for (Index k = 0; k < frames + lookahead; ++k) {
    synth.analyze_step(silence);
    const ComplexVector<double> bf =
        k < frames ? mcwf.process(y.frame(k), column(s, k)) : ComplexVector<double>::Zero(y.bins());
    delayed.segment(k * hop, hop) = synth.synthesize_step(bf, k + lookahead);
  }
  return delayed.segment(lookahead * hop, input.rows());
}

}  // namespace hearx::pipeline

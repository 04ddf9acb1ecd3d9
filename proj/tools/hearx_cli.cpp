#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <limits>
#include <optional>

#include "hearx/dsp/causality.hpp"
#include "hearx/metrics/metrics.hpp"
#include "hearx/nn/rng.hpp"
#include "hearx/pipeline/io.hpp"
#include "hearx/pipeline/pipeline.hpp"
#include "hearx/pipeline/scene.hpp"

using namespace hearx;
using Eigen::Index;
using json = nlohmann::json;

namespace {

constexpr double kSampleRate = 32000.0;

// Latency probe: 16000-sample perturbation point plus 2048 samples of tail.
constexpr Index kProbeSamples = 18048;
constexpr Index kFirstProbe = 16000;

pipeline::Wav read_input(const std::string& path) {
  pipeline::Wav wav = pipeline::read_wav(path);
  require(wav.sample_rate == kSampleRate, Errc::configuration,
          "'" + path + "' is sampled at " + std::to_string(static_cast<long>(wav.sample_rate)) + " Hz, expected 32000 Hz");
  return wav;
}

void write_mono(const std::string& path, const Eigen::VectorXd& x) {
  pipeline::write_wav(path, {kSampleRate, dsp::SignalMatrix<double>(x)}, pipeline::SampleFormat::float32);
}

std::vector<float> extract_embedding(const pipeline::Models& models, const pipeline::Wav& enroll) {
  const dsp::SignalMatrix<double> ref = enroll.samples.col(0);
  return models.embedder().extract(dsp::stft<double>(ref, dsp::StftConfig{}));
}

std::vector<float> probe_embedding(std::uint64_t seed) {
  nn::SplitMix64 rng(seed);
  std::vector<float> e(static_cast<size_t>(spk::kEmbeddingDim));
  for (float& v : e) v = static_cast<float>(rng.uniform(-1, 1));
  return e;
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << std::endl;
}

struct EnhanceArgs {
  std::string input, weights, enroll, embedding, listener, ear = "left", config, output;
  bool no_fitting = false;
  std::optional<Index> iterations;
};

int run_enhance(const EnhanceArgs& a) {
  pipeline::PipelineConfig cfg;
  if (!a.config.empty()) cfg = pipeline::PipelineConfig::from_json_text(pipeline::read_text(a.config));
  if (a.iterations) cfg.iterations = *a.iterations;
  if (a.no_fitting) cfg.enable_fitting = false;
  if (!a.listener.empty()) cfg.ear = a.ear == "right" ? pipeline::Ear::right : pipeline::Ear::left;
  cfg.validate();

  const pipeline::Models models(nn::WeightStore::load(a.weights));
  const pipeline::Wav input = read_input(a.input);
  require(input.samples.cols() == models.channels(), Errc::configuration,
          "input has " + std::to_string(input.samples.cols()) + " channels, the weights expect " +
              std::to_string(models.channels()));

  std::vector<float> embedding;
  if (!a.embedding.empty()) {
    embedding = spk::load_embedding(a.embedding);
  } else {
    embedding = extract_embedding(models, read_input(a.enroll));
  }

  std::optional<fitting::NalrPrescription> prescription;
  if (!a.listener.empty() && cfg.enable_fitting) {
    const pipeline::Listener listener = pipeline::read_listener(a.listener);
    const auto& audiogram = cfg.ear == pipeline::Ear::right ? listener.right : listener.left;
    prescription = fitting::NalrPrescription::from_audiogram(audiogram, cfg.clamp_negative_gains);
  }

  write_mono(a.output, pipeline::enhance(models, embedding, input.samples, cfg, prescription));
  return 0;
}

int run_embed(const std::string& input, const std::string& weights, const std::string& output) {
  const pipeline::Models models(nn::WeightStore::load(weights));
  spk::save_embedding(output, extract_embedding(models, read_input(input)));
  return 0;
}

struct LatencyArgs {
  std::string weights;
  Index budget = 128;
  Index trials = 20;
  std::uint64_t seed = 1;
  Index iterations = 1;
  bool streaming = false;
};

int run_check_latency(const LatencyArgs& a) {
  require(a.trials >= 1, Errc::invalid_config, "--trials must be at least 1");
  require(a.budget >= 0, Errc::invalid_config, "--budget-samples must be non-negative");
  const pipeline::Models models(nn::WeightStore::load(a.weights));
  pipeline::PipelineConfig cfg;
  cfg.enable_fitting = false;
  cfg.iterations = a.iterations;
  cfg.validate();

  pipeline::SceneSpec spec;
  spec.seed = a.seed;
  spec.channels = models.channels();
  spec.duration_s = static_cast<double>(kProbeSamples) / kSampleRate;
  const auto scene = pipeline::simulate_scene(spec);
  const auto embedding = probe_embedding(a.seed);
  const auto mode = a.streaming ? pipeline::Mode::streaming : pipeline::Mode::offline;
  const dsp::StreamProcessor proc = [&](const dsp::SignalMatrix<double>& in) {
    return pipeline::probe(models, embedding, in, cfg, std::nullopt, mode);
  };
  const dsp::CausalityHarness harness(proc, scene.mixture);

  nn::SplitMix64 rng(a.seed);
  const Index win = cfg.stft.win, hop = cfg.stft.hop;
  json trials = json::array();
  bool all = true;
  for (Index t = 0; t < a.trials; ++t) {
    const Index n = t == 0 ? kFirstProbe
                           : win + static_cast<Index>(rng.next() % static_cast<std::uint64_t>(kProbeSamples - hop - win));
    const auto r = harness.trial(n, a.budget, rng.next());
    // A trial whose taps never react cannot vouch for the deadline.
    const bool ok = r.pass && r.sensitive;
    all = all && ok;
    trials.push_back({{"n", n}, {"first_diff_index", r.first_diff_index}, {"sensitive", r.sensitive}, {"pass", ok}});
  }
  std::cout << json{{"pass", all}, {"budget_samples", a.budget}, {"trials", trials}}.dump() << std::endl;
  return all ? 0 : 1;
}

struct SimulateArgs {
  std::uint64_t seed = 1;
  std::string snr = "0";
  Index channels = 6;
  double duration = 1.0;
  std::string out_dir, interferer = "white";
  Index rir_length = 0;
};

int run_simulate(const SimulateArgs& a) {
  pipeline::SceneSpec spec;
  spec.seed = a.seed;
  spec.channels = a.channels;
  spec.duration_s = a.duration;
  spec.rir_length = a.rir_length;
  spec.interferer = a.interferer == "sweep" ? pipeline::Interferer::tonal_sweep : pipeline::Interferer::white_noise;
  if (a.snr == "inf" || a.snr == "+inf") {
    spec.snr_db = std::numeric_limits<double>::infinity();
  } else {
    try {
      size_t used = 0;
      spec.snr_db = std::stod(a.snr, &used);
      require(used == a.snr.size(), Errc::invalid_config, "--snr must be a number or 'inf'");
    } catch (const std::logic_error&) {
      fail(Errc::invalid_config, "--snr must be a number or 'inf'");
    }
  }
  const auto scene = pipeline::simulate_scene(spec);
  const std::filesystem::path dir(a.out_dir);
  std::filesystem::create_directories(dir);
  pipeline::write_wav(dir / "mixture.wav", {kSampleRate, scene.mixture});
  write_mono((dir / "target.wav").string(), scene.target_ref);
  write_mono((dir / "anechoic.wav").string(), scene.anechoic_target);
  // Enrollment: another utterance of a different seeded source.
  write_mono((dir / "enroll.wav").string(),
             pipeline::speech_like(scene.mixture.rows(), kSampleRate, nn::SplitMix64(a.seed ^ 0x5eedULL).next()));
  return 0;
}

int run_evaluate(const std::string& est_path, const std::string& ref_path, const std::string& mix_path) {
  const auto est = read_input(est_path), ref = read_input(ref_path), mix = read_input(mix_path);
  const Index n = ref.samples.rows();
  require(est.samples.rows() == n && mix.samples.rows() == n, Errc::invalid_input,
          "estimate, reference and mixture must have the same length");
  const Eigen::VectorXd e = est.samples.col(0), r = ref.samples.col(0), m = mix.samples.col(0);
  json out{{"si_sdr", metrics::si_sdr(e, r)},
           {"si_sdri", metrics::si_sdri(e, m, r)},
           {"multires_loss", metrics::multires_si_loss(e, r)}};
  std::cout << out.dump() << std::endl;
  return 0;
}

int run_init_weights(std::uint64_t seed, Index channels, bool full_size, bool non_causal, const std::string& output) {
  nn::WeightStore store = pipeline::init_system_weights(channels, seed, full_size);
  if (non_causal) {
    for (const char* prefix : {"dnn1", "dnn2"}) {
      auto cfg = gridnet::config_from_store(store, prefix);
      cfg.causal_attention = false;
      const auto h = cfg.to_hparams();
      store.set(std::string(prefix) + ".hparams", nn::Tensor({static_cast<Index>(h.size())}, h));
    }
  }
  store.save(std::filesystem::path(output));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-latency target-speaker enhancement and hearing-aid fitting"};
  app.require_subcommand(1);

  EnhanceArgs ea;
  auto* enhance = app.add_subcommand("enhance", "Enhance a multi-channel recording");
  enhance->add_option("--input", ea.input, "Multi-channel mixture WAV")->required();
  enhance->add_option("--weights", ea.weights, "INXW weight file")->required();
  auto* enroll = enhance->add_option("--enroll", ea.enroll, "Enrollment WAV of the target speaker");
  auto* emb = enhance->add_option("--embedding", ea.embedding, "Cached speaker embedding");
  enroll->excludes(emb);
  emb->excludes(enroll);
  enhance->add_option("--listener", ea.listener, "Listener JSON with audiograms");
  enhance->add_option("--ear", ea.ear, "Ear to fit")->check(CLI::IsMember({"left", "right"}));
  enhance->add_option("--config", ea.config, "Pipeline configuration JSON");
  enhance->add_option("--output", ea.output, "Mono output WAV")->required();
  enhance->add_flag("--no-fitting", ea.no_fitting, "Skip NAL-R fitting and compression");
  enhance->add_option("--iterations", ea.iterations, "Refinement passes")->check(CLI::PositiveNumber);

  std::string embed_in, embed_weights, embed_out;
  auto* embed = app.add_subcommand("embed", "Compute and cache a speaker embedding");
  embed->add_option("--input", embed_in, "Enrollment WAV")->required();
  embed->add_option("--weights", embed_weights, "INXW weight file")->required();
  embed->add_option("--output", embed_out, "Embedding file")->required();

  LatencyArgs la;
  auto* latency = app.add_subcommand("check-latency", "Perturbation test of the algorithmic latency");
  latency->add_option("--weights", la.weights, "INXW weight file")->required();
  latency->add_option("--budget-samples", la.budget, "Allowed look-ahead in samples");
  latency->add_option("--trials", la.trials, "Number of perturbation trials");
  latency->add_option("--seed", la.seed, "Probe signal and perturbation seed");
  latency->add_option("--iterations", la.iterations, "Refinement passes")->check(CLI::PositiveNumber);
  latency->add_flag("--streaming", la.streaming, "Use frame-by-frame inference instead of full-sequence forwards");

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic multi-channel scene");
  simulate->add_option("--seed", sa.seed, "Scene seed")->required();
  simulate->add_option("--snr", sa.snr, "SNR in dB at channel 0, or 'inf'")->required();
  simulate->add_option("--channels", sa.channels, "Microphones")->required();
  simulate->add_option("--duration", sa.duration, "Seconds")->required();
  simulate->add_option("--out-dir", sa.out_dir, "Output directory")->required();
  simulate->add_option("--interferer", sa.interferer, "white or sweep")->check(CLI::IsMember({"white", "sweep"}));
  simulate->add_option("--rir-length", sa.rir_length, "Reverberation tail in samples (0: anechoic)");

  std::string est, ref, mix;
  auto* evaluate = app.add_subcommand("evaluate", "Score an estimate against a reference");
  evaluate->add_option("--est", est, "Estimate WAV")->required();
  evaluate->add_option("--ref", ref, "Reference WAV")->required();
  evaluate->add_option("--mix", mix, "Mixture WAV (channel 0 is used)")->required();

  std::uint64_t init_seed = 0;
  Index init_channels = 6;
  bool init_full_size = false, init_non_causal = false;
  std::string init_out;
  auto* init = app.add_subcommand("init-weights", "Write seeded random weights for the whole system");
  init->add_option("--seed", init_seed, "Seed")->required();
  init->add_option("--channels", init_channels, "Microphones")->required();
  init->add_flag("--full-size", init_full_size, "Full-size networks instead of the compact default");
  init->add_flag("--non-causal-attention", init_non_causal, "Drop the attention mask (latency test mutant)");
  init->add_option("--output", init_out, "INXW weight file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage-error", e.what());
    return 2;
  }

  try {
    if (*enhance) {
      require(!ea.enroll.empty() || !ea.embedding.empty(), Errc::invalid_config, "one of --enroll or --embedding is required");
      return run_enhance(ea);
    }
    if (*embed) return run_embed(embed_in, embed_weights, embed_out);
    if (*latency) return run_check_latency(la);
    if (*simulate) return run_simulate(sa);
    if (*evaluate) return run_evaluate(est, ref, mix);
    if (*init) return run_init_weights(init_seed, init_channels, init_full_size, init_non_causal, init_out);
  } catch (const Error& e) {
    print_error(to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal-error", e.what());
    return 1;
  }
  return 1;
}

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hearx/beamform/mcwf.hpp"
#include "hearx/dsp/stft.hpp"
#include "hearx/fitting/fitting.hpp"
#include "hearx/gridnet/gridnet.hpp"
#include "hearx/nn/weight_store.hpp"
#include "hearx/spk/embedder.hpp"

namespace hearx::pipeline {

using Eigen::Index;
using dsp::SignalMatrix;

enum class Ear { left, right };

struct PipelineConfig {
  Index reference_channel = 0;
  Index iterations = 1;  // DNN2 refinement passes
  bool enable_fitting = true;
  bool clamp_negative_gains = false;
  Ear ear = Ear::left;
  dsp::StftConfig stft;
  beamform::McwfConfig mcwf;
  fitting::DrcConfig drc;

  void validate() const;
  /// Applies overrides from a JSON object; unknown keys are rejected.
  static PipelineConfig from_json_text(const std::string& text, PipelineConfig base);
  static PipelineConfig from_json_text(const std::string& text) { return from_json_text(text, PipelineConfig{}); }
};

/// Running least-squares scale of the estimate onto the beamformer output.
class RescaleState {
 public:
  static constexpr double kFloor = 1e-8;

  /// Accumulates sum Re(bf conj(est)) and sum |est|^2 over all bins.
  void update(const Eigen::Ref<const dsp::ComplexVector<double>>& bf,
              const Eigen::Ref<const dsp::ComplexVector<double>>& est);
  double gain() const { return std::max(numerator_, 0.0) / std::max(denominator_, kFloor); }
  double numerator() const { return numerator_; }
  double denominator() const { return denominator_; }

 private:
  double numerator_ = 0.0;
  double denominator_ = 0.0;
};

/// update() followed by scaling `est` with the new gain.
dsp::ComplexVector<double> rescale_step(RescaleState& state, const Eigen::Ref<const dsp::ComplexVector<double>>& bf,
                                        const Eigen::Ref<const dsp::ComplexVector<double>>& est);

/// DNN1, DNN2 and (optionally) the enrollment embedder, read from one weight file.
class Models {
 public:
  explicit Models(const nn::WeightStore& store);

  const gridnet::GridNet& dnn1() const { return *dnn1_; }
  const gridnet::GridNet& dnn2() const { return *dnn2_; }
  bool has_embedder() const { return embedder_ != nullptr; }
  const spk::Embedder& embedder() const;
  Index channels() const { return channels_; }

 private:
  std::unique_ptr<gridnet::GridNet> dnn1_, dnn2_;
  std::unique_ptr<spk::Embedder> embedder_;
  Index channels_ = 0;
};

/// Seeded weights for a complete system (dnn1, dnn2, spk).
nn::WeightStore init_system_weights(Index channels, std::uint64_t seed, bool full_size = false);

/// Which network implementation drives the cascade.
enum class Mode {
  streaming,  // frame-by-frame with carried state
  offline,    // full-sequence forwards over the whole input
};

/// Number of columns returned by probe().
Index probe_taps(const PipelineConfig& cfg);

/// Internal signals for latency probing, N x probe_taps(cfg): the output,
/// DNN1's estimate, then per refinement stage the MCWF output and the unscaled
/// DNN2 estimate. A frame computed at step k is resynthesized at target index
/// k + P, the output's own schedule, so one latency budget covers every column.
SignalMatrix<double> probe(const Models& models, const std::vector<float>& embedding,
                           const Eigen::Ref<const SignalMatrix<double>>& input, const PipelineConfig& cfg,
                           const std::optional<fitting::NalrPrescription>& prescription = std::nullopt,
                           Mode mode = Mode::streaming);

/// Frame-online enhancement: per hop, analysis -> DNN1 -> MCWF -> DNN2 ->
/// rescale -> optional fitting -> synthesis. Output sample t depends only on
/// input samples up to the end of its hop.
class StreamingPipeline {
 public:
  StreamingPipeline(const Models& models, std::vector<float> embedding, const PipelineConfig& cfg,
                    std::optional<fitting::NalrPrescription> prescription = std::nullopt);
  ~StreamingPipeline();
  StreamingPipeline(StreamingPipeline&&) noexcept;

  /// Accepts any number of samples x channels; returns the samples completed
  /// by this call (a multiple of hop).
  Eigen::VectorXd process(const Eigen::Ref<const SignalMatrix<double>>& block);
  Index frames_processed() const;

 private:
  friend SignalMatrix<double> probe(const Models&, const std::vector<float>&,
                                    const Eigen::Ref<const SignalMatrix<double>>&, const PipelineConfig&,
                                    const std::optional<fitting::NalrPrescription>&, Mode);
  struct State;
  std::unique_ptr<State> state_;
};

/// Runs a whole recording (zero-padded to a hop multiple) and returns
/// input-length mono output aligned with the input.
Eigen::VectorXd enhance(const Models& models, const std::vector<float>& embedding,
                        const Eigen::Ref<const SignalMatrix<double>>& input, const PipelineConfig& cfg,
                        const std::optional<fitting::NalrPrescription>& prescription = std::nullopt,
                        Mode mode = Mode::streaming);

/// Beamformer output (MCWF tap) for a given per-frame target estimate, as a
/// waveform aligned with the input. Used to evaluate the spatial filter alone.
Eigen::VectorXd beamform_with_estimate(const Eigen::Ref<const SignalMatrix<double>>& input,
                                       const Eigen::Ref<const Eigen::VectorXd>& target_estimate,
                                       const PipelineConfig& cfg);

}  // namespace hearx::pipeline

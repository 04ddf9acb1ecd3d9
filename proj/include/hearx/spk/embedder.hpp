#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hearx/dsp/stft.hpp"
#include "hearx/nn/kernels.hpp"
#include "hearx/nn/weight_store.hpp"

namespace hearx::spk {

using Eigen::Index;
using nn::Tensor;

/// Enrollment embedder: a strided 2-D conv encoder with dense blocks, a
/// dilated TCN and mean pooling over time. Processing is non-causal.
struct EmbedConfig {
  Index hidden = 16;            // encoder channels
  Index downsamples = 6;        // frequency stride-2 stages
  Index dense_layers = 2;       // conv layers per dense block
  Index tcn_repeats = 3;
  Index tcn_blocks = 4;         // dilation 2^b within a repeat
  Index tcn_channels = 128;     // also the inner width of each TCN block
  Index n_freq = 257;

  static EmbedConfig toy();
  static EmbedConfig full_size();

  Index embedding_dim() const { return tcn_channels; }
  Index encoded_freq() const;
  void validate() const;

  std::vector<float> to_hparams() const;
  static EmbedConfig from_hparams(const Tensor& hparams);
  friend bool operator==(const EmbedConfig&, const EmbedConfig&) = default;
};

inline constexpr const char* kPrefix = "spk";
inline constexpr const char* kEmbeddingName = "spk.embedding";
inline constexpr Index kEmbeddingDim = 128;

std::vector<nn::ParamSpec> parameter_specs(const EmbedConfig& cfg);
Index embed_param_count(const EmbedConfig& cfg);
/// Parameters of the TCN stack only.
Index tcn_param_count(const EmbedConfig& cfg);
nn::WeightStore init_weights(const EmbedConfig& cfg, std::uint64_t seed);
EmbedConfig config_from_store(const nn::WeightStore& store);

class Embedder {
 public:
  Embedder(const EmbedConfig& cfg, const nn::WeightStore& store);

  const EmbedConfig& config() const { return cfg_; }

  /// Embedding of a single-channel adaptation spectrogram (at least one frame).
  std::vector<float> extract(const dsp::ComplexSpectrogram<double>& adaptation) const;
  /// Frame-level TCN output [T, channels] before pooling.
  Tensor frame_features(const dsp::ComplexSpectrogram<double>& adaptation) const;

 private:
  struct Conv {
    nn::Conv2d conv;
    float prelu = 0.25f;
  };
  struct DownStage {
    Conv down;
    std::vector<Conv> dense;
    nn::RowMatrixXf transition_t;  // (hidden * (layers + 1)) x hidden
    Eigen::RowVectorXf transition_bias;
  };
  struct TcnBlock {
    Index dilation = 1;
    nn::RowMatrixXf in_t, out_t;
    Eigen::RowVectorXf in_bias, out_bias;
    float prelu1 = 0.25f, prelu2 = 0.25f;
    Eigen::RowVectorXf ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    nn::RowMatrixXf dconv;  // 3 x hidden taps
    Eigen::RowVectorXf dconv_bias;
  };

  Tensor encode(const dsp::ComplexSpectrogram<double>& adaptation) const;

  EmbedConfig cfg_;
  Conv conv_in_;
  std::vector<DownStage> stages_;
  nn::RowMatrixXf proj_t_;
  Eigen::RowVectorXf proj_bias_;
  std::vector<TcnBlock> tcn_;
};

/// Embedding cache: an INXW container holding `spk.embedding` [128].
void save_embedding(const std::filesystem::path& path, const std::vector<float>& embedding);
std::vector<float> load_embedding(const std::filesystem::path& path);
std::vector<float> embedding_from_store(const nn::WeightStore& store);

}  // namespace hearx::spk

#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hearx/dsp/stft.hpp"
#include "hearx/nn/kernels.hpp"
#include "hearx/nn/weight_store.hpp"

namespace hearx::gridnet {

using Eigen::Index;
using nn::Tensor;

/// Hyper-parameters of the frame-online, speaker-conditioned multi-channel
/// TF-GridNet. Symbols follow the TF-GridNet convention: D embedding channels,
/// B blocks, I/J unfold kernel/stride, H LSTM units, L heads, E per-head
/// key/query channels per frequency.
struct GridNetConfig {
  Index emb_dim = 16;         // D
  Index blocks = 2;           // B
  Index unfold = 2;           // I
  Index unfold_stride = 1;    // J
  Index hidden = 32;          // H
  Index heads = 2;            // L
  Index qk_dim = 2;           // E
  Index input_channels = 4;   // 2 * mics (+4 for the second stage)
  Index n_freq = 257;
  Index lookahead = 3;
  Index conv_time = 3;        // first/last Conv2D kernel
  Index conv_freq = 3;
  Index speaker_dim = 128;
  bool causal_attention = true;
  bool use_film = true;

  /// Desk-scale configuration used by tests and the default CLI.
  static GridNetConfig toy(Index mics, bool second_stage = false);
  /// TF-GridNet defaults (D=48, B=6, I=4, J=1, H=192, L=4) with E=2.
  static GridNetConfig full_size(Index mics, bool second_stage = false);

  Index value_dim() const { return emb_dim / heads; }
  void validate() const;

  std::vector<float> to_hparams() const;
  static GridNetConfig from_hparams(const Tensor& hparams);
  friend bool operator==(const GridNetConfig&, const GridNetConfig&) = default;
};

/// Every parameter tensor the configuration demands, named `<prefix>.<layer>.<param>`.
std::vector<nn::ParamSpec> parameter_specs(const GridNetConfig& cfg, const std::string& prefix);
Index param_count(const GridNetConfig& cfg);

/// Seeded weights plus a `<prefix>.hparams` record of the configuration.
nn::WeightStore init_weights(const GridNetConfig& cfg, const std::string& prefix, std::uint64_t seed);
/// Reads `<prefix>.hparams` back from a store.
GridNetConfig config_from_store(const nn::WeightStore& store, const std::string& prefix);

/// Stacks real and imaginary parts channel-wise: [Re c0, Im c0, Re c1, ...],
/// then the extra single-channel spectrograms in order. Output [T, F, 2C + 2X].
Tensor stack_ri(const dsp::ComplexSpectrogram<double>& mixture,
                std::span<const dsp::ComplexSpectrogram<double>* const> extras = {});
/// Stacks one frame: mixture bins x C plus extra bins x 1 columns -> [F, 2C + 2X].
void stack_ri_frame(const Eigen::Ref<const dsp::FrameMatrix<double>>& mixture,
                    std::span<const dsp::ComplexVector<double>* const> extras, nn::MatrixMap out);
/// Inverse of the two-channel output head.
dsp::ComplexSpectrogram<double> unstack_ri(const Tensor& ri);

class GridNet;

/// Per-stream inference state (conv histories, LSTM carries, attention caches).
class GridNetStream {
 public:
  /// Consumes one (padded-domain) input frame F x Cin, returns the F x 2 output frame.
  nn::RowMatrixXf step(const Eigen::Ref<const nn::RowMatrixXf>& frame);
  Index frames_processed() const { return frames_; }

 private:
  friend class GridNet;
  struct Block;
  GridNetStream(const GridNet& net, std::span<const float> embedding);

  const GridNet* net_;
  std::vector<nn::Film::Modulation> film_;
  Tensor in_window_, out_window_;
  std::vector<std::shared_ptr<Block>> blocks_;
  Index frames_ = 0;
};

/// DNN_1 / DNN_2: conv -> LN -> B x (FiLM, sub-band temporal, intra-frame
/// spectral, causal full-band attention) -> output conv to RI.
class GridNet {
 public:
  GridNet(const GridNetConfig& cfg, const nn::WeightStore& store, const std::string& prefix);

  const GridNetConfig& config() const { return cfg_; }

  /// Full-sequence forward over input [T, F, Cin] -> [T, F, 2]. The caller is
  /// responsible for the left zero-padding that realizes the lookahead.
  Tensor forward(const Tensor& input, std::span<const float> embedding) const;
  GridNetStream stream(std::span<const float> embedding) const { return GridNetStream(*this, embedding); }

  /// Block sub-modules, exposed for tests. All take and return [T, F, D].
  Tensor subband_temporal(Index block, const Tensor& x) const;
  Tensor intraframe_spectral(Index block, const Tensor& x) const;
  Tensor full_band_attention(Index block, const Tensor& x) const;

 private:
  friend class GridNetStream;

  struct TemporalModule {
    Tensor ln_gamma, ln_beta;
    nn::Lstm lstm;
    std::vector<nn::RowMatrixXf> deconv;  // I taps, H x D
    Eigen::RowVectorXf deconv_bias;
  };
  struct SpectralModule {
    Tensor ln_gamma, ln_beta;
    nn::Lstm fwd, bwd;
    std::vector<nn::RowMatrixXf> deconv;  // I taps, 2H x D
    Eigen::RowVectorXf deconv_bias;
  };
  struct Projection {
    nn::RowMatrixXf weight_t;  // D x out
    Eigen::RowVectorXf bias;
    std::vector<float> prelu;  // one per head
    Tensor ln_gamma, ln_beta;  // [heads, F, width]
  };
  struct AttentionModule {
    Projection q, k, v, proj;
  };
  struct Block {
    nn::Film film;
    TemporalModule temporal;
    SpectralModule spectral;
    AttentionModule attn;
  };

  struct TemporalState {
    std::vector<nn::RowMatrixXf> history;  // last I normalized frames, oldest first
    std::vector<nn::RowMatrixXf> outputs;  // last I LSTM outputs, newest first
    nn::RowMatrixXf h, c;
  };
  TemporalState temporal_state() const;
  /// Residual-free temporal module output for one new frame (F x D).
  nn::RowMatrixXf temporal_step(const TemporalModule& m, TemporalState& s,
                                const Eigen::Ref<const nn::RowMatrixXf>& frame) const;
  void spectral_inplace(const SpectralModule& m, Tensor& x) const;
  /// Per-frame q/k/v projections: rows of width heads * F * width.
  void project(const Projection& p, Index width, const Eigen::Ref<const nn::RowMatrixXf>& frame,
               std::span<float> out) const;
  /// Output projection of attended values (one frame, F x D, in place).
  void output_projection(const Projection& p, nn::MatrixMap frame) const;
  void apply_attention_residual(const AttentionModule& m, Tensor& x) const;

  GridNetConfig cfg_;
  nn::Conv2d conv_in_, conv_out_;
  Tensor ln_in_gamma_, ln_in_beta_;
  std::vector<Block> blocks_;
};

/// Complex spectral mapping over stacked input [T, F, Cin]: runs the network
/// on the input left-padded with `lookahead` zero frames and returns all
/// T + lookahead output frames. Output frame j estimates target frame j.
dsp::ComplexSpectrogram<double> model_forward(const GridNet& net, const Tensor& stacked_input,
                                              std::span<const float> embedding);

}  // namespace hearx::gridnet

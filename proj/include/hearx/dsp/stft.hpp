#pragma once

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>
#include <cmath>
#include <complex>
#include <vector>

#include "hearx/dsp/window.hpp"
#include "hearx/error.hpp"

namespace hearx::dsp {

using Eigen::Index;

template <typename Scalar>
using ComplexVector = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;
template <typename Scalar>
using SignalMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;  // samples x channels
template <typename Scalar>
using FrameMatrix = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Framing parameters shared by analysis, synthesis and the model lookahead.
struct StftConfig {
  double sample_rate = 32000.0;
  Index win = 512;
  Index hop = 128;
  Index lookahead = 3;

  Index fft_size() const { return win; }
  Index bins() const { return win / 2 + 1; }
  Index overlap() const { return win / hop; }

  void validate() const {
    require(sample_rate > 0, Errc::invalid_config, "stft: sample rate must be positive");
    require(win >= 2 && win % 2 == 0, Errc::invalid_config, "stft: window must be even and >= 2");
    require(hop >= 1 && win % hop == 0, Errc::invalid_config, "stft: window must be a multiple of hop");
    require(lookahead >= 0 && lookahead < overlap(), Errc::invalid_config, "stft: lookahead must be below the overlap factor");
  }
};

/// Complex coefficients indexed [frame][bin][channel].
template <typename Scalar>
class ComplexSpectrogram {
 public:
  using Complex = std::complex<Scalar>;
  using FrameMap = Eigen::Map<FrameMatrix<Scalar>>;
  using ConstFrameMap = Eigen::Map<const FrameMatrix<Scalar>>;

  ComplexSpectrogram() = default;
  ComplexSpectrogram(Index frames, Index bins, Index channels)
      : frames_(frames), bins_(bins), channels_(channels),
        data_(static_cast<size_t>(frames * bins * channels), Complex(0)) {
    require(frames >= 0 && bins >= 1 && channels >= 1, Errc::invalid_shape, "spectrogram: bad dimensions");
  }

  Index frames() const { return frames_; }
  Index bins() const { return bins_; }
  Index channels() const { return channels_; }

  Complex& operator()(Index t, Index k, Index c) { return data_[static_cast<size_t>((t * bins_ + k) * channels_ + c)]; }
  const Complex& operator()(Index t, Index k, Index c) const {
    return data_[static_cast<size_t>((t * bins_ + k) * channels_ + c)];
  }

  /// bins x channels view of one frame.
  FrameMap frame(Index t) { return FrameMap(data_.data() + t * bins_ * channels_, bins_, channels_); }
  ConstFrameMap frame(Index t) const { return ConstFrameMap(data_.data() + t * bins_ * channels_, bins_, channels_); }

  void append(const Eigen::Ref<const FrameMatrix<Scalar>>& frame_data) {
    require(frame_data.rows() == bins_ && frame_data.cols() == channels_, Errc::invalid_shape,
            "spectrogram: appended frame shape mismatch");
    data_.resize(data_.size() + static_cast<size_t>(bins_ * channels_));
    frame(frames_++) = frame_data;
  }

  bool all_finite() const {
    for (const auto& v : data_)
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    return true;
  }

  const std::vector<Complex>& data() const { return data_; }

 private:
  Index frames_ = 0;
  Index bins_ = 1;
  Index channels_ = 1;
  std::vector<Complex> data_;
};

/// Real FFT: forward unnormalized, inverse scaled by 1/n.
template <typename Scalar>
class RealFft {
 public:
  explicit RealFft(Index n) : n_(n), freq_(static_cast<size_t>(n / 2 + 1)) {
    fft_.SetFlag(Eigen::FFT<Scalar>::HalfSpectrum);
  }

  Index size() const { return n_; }

  void forward(const Scalar* in, std::complex<Scalar>* out) { fft_.fwd(out, in, n_); }

  void inverse(const std::complex<Scalar>* in, Scalar* out) {
    std::copy(in, in + n_ / 2 + 1, freq_.begin());
    // The half-spectrum inverse assumes real DC and Nyquist terms.
    freq_.front().imag(0);
    freq_.back().imag(0);
    fft_.inv(out, freq_.data(), n_);
  }

 private:
  Index n_;
  Eigen::FFT<Scalar> fft_;
  std::vector<std::complex<Scalar>> freq_;
};

/// Streaming analysis/synthesis state for one stream.
///
/// Analysis frame k covers input samples [(k+1)hop - win, (k+1)hop): the most
/// recent win samples after the k-th block arrives. Synthesis takes target
/// frame j (covering output samples [(j+1)hop - win, (j+1)hop)) and emits the
/// hop [(j+1)hop - win, (j+2)hop - win), the oldest hop that now has all
/// overlapping contributions. With lookahead P = win/hop - 1 the emitted hop
/// for target frame k+P is exactly the latest input hop.
template <typename Scalar>
class StreamingStft {
 public:
  StreamingStft(const StftConfig& cfg, Index channels)
      : cfg_(cfg), channels_(channels), window_(sqrt_hann<Scalar>(cfg.win)), fft_(cfg.win),
        ring_(SignalMatrix<Scalar>::Zero(cfg.win, channels)), ola_(VectorX<Scalar>::Zero(cfg.win)),
        scratch_(cfg.win) {
    cfg_.validate();
    require(channels >= 1, Errc::invalid_config, "stft: need at least one channel");
    cola_ = overlap_sum(window_, cfg_.hop, 0);
  }

  const StftConfig& config() const { return cfg_; }
  Index channels() const { return channels_; }
  const VectorX<Scalar>& window() const { return window_; }
  Scalar cola_constant() const { return cola_; }

  Index consumed() const { return consumed_; }
  Index emitted() const { return emitted_; }
  Index analyzed_frames() const { return consumed_ / cfg_.hop; }

  /// Delay of the identity chain in which analysis frame k is resubmitted as target frame k+P.
  Index alignment_offset() const { return cfg_.lookahead * cfg_.hop; }

  /// Consumes hop samples per channel and returns the bins x channels spectrum
  /// of the latest window.
  FrameMatrix<Scalar> analyze_step(const Eigen::Ref<const SignalMatrix<Scalar>>& block) {
    require(block.rows() == cfg_.hop && block.cols() == channels_, Errc::invalid_input,
            "analyze_step: block must be hop samples x channels");
    const Index keep = cfg_.win - cfg_.hop;
    if (keep > 0) ring_.topRows(keep) = ring_.bottomRows(keep).eval();
    ring_.bottomRows(cfg_.hop) = block;
    consumed_ += cfg_.hop;

    FrameMatrix<Scalar> out(cfg_.bins(), channels_);
    ComplexVector<Scalar> spec(cfg_.bins());
    for (Index c = 0; c < channels_; ++c) {
      Eigen::Map<VectorX<Scalar>>(scratch_.data(), cfg_.win) = ring_.col(c).cwiseProduct(window_);
      fft_.forward(scratch_.data(), spec.data());
      out.col(c) = spec;
    }
    return out;
  }

  /// Overlap-adds target frame `index` (bins x 1) and returns the hop that completed.
  /// Indices must be consecutive after the first call; the first call may start
  /// anywhere (earlier frames count as zero).
  VectorX<Scalar> synthesize_step(const Eigen::Ref<const ComplexVector<Scalar>>& frame, Index index) {
    require(frame.size() == cfg_.bins(), Errc::invalid_input, "synthesize_step: frame must have fft/2+1 bins");
    if (next_index_ >= 0)
      require(index == next_index_, Errc::contract_violation, "synthesize_step: frames must be submitted in order");
    else
      require(index >= 0, Errc::contract_violation, "synthesize_step: negative frame index");
    const Index emit_end = (index + 2) * cfg_.hop - cfg_.win;  // exclusive, in output samples
    require(emit_end <= consumed_, Errc::contract_violation,
            "synthesize_step: frame would emit samples beyond consumed input");
    next_index_ = index + 1;

    fft_.inverse(frame.data(), scratch_.data());
    ola_ += Eigen::Map<const VectorX<Scalar>>(scratch_.data(), cfg_.win).cwiseProduct(window_);

    VectorX<Scalar> out = ola_.head(cfg_.hop) / cola_;
    const Index keep = cfg_.win - cfg_.hop;
    ola_.head(keep) = ola_.tail(keep).eval();
    ola_.tail(cfg_.hop).setZero();
    if (emit_end > 0) emitted_ = std::max(emitted_, emit_end);
    return out;
  }

 private:
  StftConfig cfg_;
  Index channels_;
  VectorX<Scalar> window_;
  Scalar cola_;
  RealFft<Scalar> fft_;
  SignalMatrix<Scalar> ring_;
  VectorX<Scalar> ola_;
  std::vector<Scalar> scratch_;
  Index consumed_ = 0;
  Index emitted_ = 0;
  Index next_index_ = -1;
};

/// Frames a whole signal exactly as the streaming analyzer would, zero-padding
/// the tail to a multiple of hop.
template <typename Scalar>
ComplexSpectrogram<Scalar> stft(const Eigen::Ref<const SignalMatrix<Scalar>>& signal, const StftConfig& cfg) {
  StreamingStft<Scalar> analyzer(cfg, signal.cols());
  const Index frames = (signal.rows() + cfg.hop - 1) / cfg.hop;
  ComplexSpectrogram<Scalar> out(0, cfg.bins(), signal.cols());
  SignalMatrix<Scalar> block(cfg.hop, signal.cols());
  for (Index k = 0; k < frames; ++k) {
    const Index start = k * cfg.hop;
    const Index n = std::min(cfg.hop, signal.rows() - start);
    block.setZero();
    block.topRows(n) = signal.middleRows(start, n);
    out.append(analyzer.analyze_step(block));
  }
  return out;
}

}  // namespace hearx::dsp

#pragma once

#include <span>
#include <vector>

#include "hearx/nn/tensor.hpp"

namespace hearx::nn {

enum class TimePadding {
  causal,    // past side only: output t sees inputs t-KT+1 .. t
  centered,  // symmetric, for offline models
};

/// 2-D cross-correlation over [T, F, Cin] -> [T, F', Cout].
///
/// Kernel layout [Cout, Cin, KT, KF]; KF must be odd. Frequency padding is
/// "same" (KF/2 each side), optionally strided.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const Tensor& weight, const Tensor& bias, TimePadding time_padding, Index freq_stride = 1);

  Index in_channels() const { return cin_; }
  Index out_channels() const { return cout_; }
  Index kernel_time() const { return kt_; }
  Index out_freq(Index freq) const { return (freq - 1) / stride_ + 1; }

  Tensor forward(const Tensor& x) const;
  /// Computes output frame t only, reading whatever input frames it needs from x.
  void forward_frame(const Tensor& x, Index t, MatrixMap out) const;

 private:
  Index cin_ = 0, cout_ = 0, kt_ = 0, kf_ = 0, stride_ = 1;
  TimePadding time_padding_ = TimePadding::causal;
  std::vector<RowMatrixXf> taps_;  // [kt * kf_ + kf]: Cin x Cout
  Eigen::RowVectorXf bias_;
};

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, TimePadding time_padding,
              Index freq_stride = 1);

/// Normalizes over `axes` to zero mean / unit variance, then applies gamma and
/// beta (shaped like the normalized dims). Statistics accumulate in double.
Tensor layer_norm(const Tensor& x, std::span<const Index> axes, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);
/// In-place variant over the trailing `trailing_dims` dimensions.
void layer_norm_trailing(Tensor& x, Index trailing_dims, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

/// LSTM cell with gate order (i, f, g, o).
///
/// Weights: w_ih [4H, Din], w_hh [4H, H], bias [4H] (a single bias; converters
/// from two-bias layouts sum them). Sigmoid gates, tanh cell and output.
class Lstm {
 public:
  Lstm() = default;
  Lstm(const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias);

  Index input_size() const { return input_; }
  Index hidden_size() const { return hidden_; }

  /// One time step for a batch of N independent sequences (rows).
  void step(const Eigen::Ref<const RowMatrixXf>& x, RowMatrixXf& h, RowMatrixXf& c) const;
  /// Input contribution x W_ih^T + bias, computable for many steps at once.
  RowMatrixXf project(const Eigen::Ref<const RowMatrixXf>& x) const;
  /// One step from a precomputed input projection.
  void step_projected(const Eigen::Ref<const RowMatrixXf>& projected, RowMatrixXf& h, RowMatrixXf& c) const;

 private:
  Index input_ = 0, hidden_ = 0;
  RowMatrixXf w_ih_t_;  // Din x 4H
  RowMatrixXf w_hh_t_;  // H x 4H
  Eigen::RowVectorXf bias_;
};

enum class Direction { forward, backward };

/// Runs an LSTM over x [T, Din] from zero state, returning [T, H]. Backward
/// direction processes t = T-1 .. 0 and writes outputs at their own index.
Tensor lstm_forward(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias,
                    Direction direction = Direction::forward);

/// Multi-head scaled dot-product attention.
///
/// q, k: [T, heads * dk]; v: [T, heads * dv]. Each head uses its own column
/// slice and scale 1/sqrt(dk). With `causal`, key s > query t is excluded
/// (probability exactly zero).
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, Index heads, bool causal);

/// Key/value cache for frame-by-frame causal attention.
class AttentionCache {
 public:
  AttentionCache() = default;
  AttentionCache(Index heads, Index dk, Index dv) : heads_(heads), dk_(dk), dv_(dv) {}

  Index length() const { return length_; }
  void append(std::span<const float> key, std::span<const float> value);
  /// Attends the newest query over every cached step (including the newest).
  void attend(std::span<const float> query, std::span<float> out) const;

 private:
  Index heads_ = 0, dk_ = 0, dv_ = 0, length_ = 0;
  std::vector<float> keys_, values_;
};

/// Feature-wise linear modulation: out[t,f,d] = gamma_d x[t,f,d] + beta_d with
/// gamma = w_gamma e + b_gamma, beta = w_beta e + b_beta (w: [D, E]).
class Film {
 public:
  Film() = default;
  Film(const Tensor& w_gamma, const Tensor& b_gamma, const Tensor& w_beta, const Tensor& b_beta);

  Index channels() const { return w_gamma_.rows(); }
  Index embedding_size() const { return w_gamma_.cols(); }

  struct Modulation {
    Eigen::RowVectorXf gamma, beta;
  };
  Modulation modulation(std::span<const float> embedding) const;
  static void apply(const Modulation& m, MatrixMap frame);

 private:
  RowMatrixXf w_gamma_, w_beta_;
  Eigen::VectorXf b_gamma_, b_beta_;
};

Tensor film(const Tensor& x, std::span<const float> embedding, const Tensor& w_gamma, const Tensor& b_gamma,
            const Tensor& w_beta, const Tensor& b_beta);

inline float prelu(float x, float alpha) { return x >= 0.0f ? x : alpha * x; }

// Takes const& so Eigen maps and blocks can be passed as temporaries.
template <typename Derived>
void prelu_inplace(const Eigen::MatrixBase<Derived>& m_, float alpha) {
  auto& m = const_cast<Eigen::MatrixBase<Derived>&>(m_);
  m.derived() = m.unaryExpr([alpha](float v) { return prelu(v, alpha); });
}

}  // namespace hearx::nn

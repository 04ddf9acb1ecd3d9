#include "hearx/nn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hearx::nn {

namespace {


void require_rank(const Tensor& t, Index rank, const char* what) {
  require(t.rank() == rank, Errc::invalid_shape, std::string(what) + ": expected rank " + std::to_string(rank) +
                                                     ", got " + t.shape_string());
}

}  // namespace

// ---------------------------------------------------------------- conv2d

Conv2d::Conv2d(const Tensor& weight, const Tensor& bias, TimePadding time_padding, Index freq_stride)
    : stride_(freq_stride), time_padding_(time_padding) {
  require_rank(weight, 4, "conv2d kernel");
  cout_ = weight.dim(0);
  cin_ = weight.dim(1);
  kt_ = weight.dim(2);
  kf_ = weight.dim(3);
  require(kt_ >= 1 && kf_ >= 1 && kf_ % 2 == 1, Errc::invalid_shape, "conv2d: frequency kernel must be odd");
  require(freq_stride >= 1, Errc::invalid_shape, "conv2d: stride must be positive");
  require(bias.size() == cout_, Errc::invalid_shape, "conv2d: bias length must equal output channels");
  taps_.assign(static_cast<size_t>(kt_ * kf_), RowMatrixXf(cin_, cout_));
  for (Index o = 0; o < cout_; ++o)
    for (Index i = 0; i < cin_; ++i)
      for (Index a = 0; a < kt_; ++a)
        for (Index b = 0; b < kf_; ++b) taps_[static_cast<size_t>(a * kf_ + b)](i, o) = weight.at({o, i, a, b});
  bias_ = Eigen::Map<const Eigen::RowVectorXf>(bias.data(), cout_);
}

void Conv2d::forward_frame(const Tensor& x, Index t, MatrixMap out) const {
  const Index frames = x.dim(0), freq = x.dim(1);
  const Index fout = out_freq(freq);
  require(out.rows() == fout && out.cols() == cout_, Errc::invalid_shape, "conv2d: output frame shape");
  out.rowwise() = bias_;
  const Index t0 = time_padding_ == TimePadding::causal ? t - (kt_ - 1) : t - kt_ / 2;
  for (Index a = 0; a < kt_; ++a) {
    const Index src = t0 + a;
    if (src < 0 || src >= frames) continue;
    ConstMatrixMap in = x.frame(src);
    for (Index b = 0; b < kf_; ++b) {
      const Index d = b - kf_ / 2;
      const RowMatrixXf& tap = taps_[static_cast<size_t>(a * kf_ + b)];
      if (stride_ == 1) {
        const Index lo = std::max<Index>(0, -d);
        const Index hi = std::min<Index>(freq, freq - d);
        if (hi > lo) out.middleRows(lo, hi - lo).noalias() += in.middleRows(lo + d, hi - lo) * tap;
      } else {
        // Output rows fo with 0 <= fo*stride + d < freq.
        Index lo = 0;
        while (lo < fout && lo * stride_ + d < 0) ++lo;
        Index hi = lo;
        while (hi < fout && hi * stride_ + d < freq) ++hi;
        if (hi <= lo) continue;
        using Strided = Eigen::Map<const RowMatrixXf, 0, Eigen::OuterStride<>>;
        Strided rows(in.data() + (lo * stride_ + d) * cin_, hi - lo, cin_, Eigen::OuterStride<>(stride_ * cin_));
        out.middleRows(lo, hi - lo).noalias() += rows * tap;
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x) const {
  require_rank(x, 3, "conv2d input");
  require(x.dim(2) == cin_, Errc::invalid_shape, "conv2d: input channels " + std::to_string(x.dim(2)) +
                                                     " do not match kernel " + std::to_string(cin_));
  require(x.dim(1) >= 1, Errc::invalid_shape, "conv2d: empty frequency axis");
  const Index fout = out_freq(x.dim(1));
  Tensor y({x.dim(0), fout, cout_});
  for (Index t = 0; t < x.dim(0); ++t) forward_frame(x, t, y.frame(t));
  return y;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, TimePadding time_padding,
              Index freq_stride) {
  return Conv2d(weight, bias, time_padding, freq_stride).forward(x);
}

// ---------------------------------------------------------------- layer norm

void layer_norm_trailing(Tensor& x, Index trailing_dims, const Tensor& gamma, const Tensor& beta, float eps) {
  require(trailing_dims >= 1 && trailing_dims <= x.rank(), Errc::invalid_shape, "layer_norm: bad axes");
  Index group = 1;
  for (Index i = x.rank() - trailing_dims; i < x.rank(); ++i) group *= x.dim(i);
  require(group > 0, Errc::invalid_shape, "layer_norm: zero-size normalized axis");
  require(gamma.size() == group && beta.size() == group, Errc::invalid_shape,
          "layer_norm: gamma/beta must match the normalized dims");
  const Index groups = x.size() / group;
  float* p = x.data();
  for (Index g = 0; g < groups; ++g, p += group) {
    double sum = 0.0, sq = 0.0;
    for (Index i = 0; i < group; ++i) sum += p[i];
    const double mean = sum / static_cast<double>(group);
    for (Index i = 0; i < group; ++i) {
      const double d = p[i] - mean;
      sq += d * d;
    }
    const double inv = 1.0 / std::sqrt(sq / static_cast<double>(group) + static_cast<double>(eps));
    for (Index i = 0; i < group; ++i)
      p[i] = static_cast<float>((p[i] - mean) * inv) * gamma[i] + beta[i];
  }
}

Tensor layer_norm(const Tensor& x, std::span<const Index> axes, const Tensor& gamma, const Tensor& beta, float eps) {
  require(!axes.empty(), Errc::invalid_shape, "layer_norm: no axes given");
  std::vector<bool> normalized(static_cast<size_t>(x.rank()), false);
  for (Index a : axes) {
    require(a >= 0 && a < x.rank(), Errc::invalid_shape, "layer_norm: axis out of range");
    require(x.dim(a) > 0, Errc::invalid_shape, "layer_norm: zero-size normalized axis");
    normalized[static_cast<size_t>(a)] = true;
  }
  // Trailing contiguous axes: fast path.
  Index first = x.rank();
  while (first > 0 && normalized[static_cast<size_t>(first - 1)]) --first;
  if (std::count(normalized.begin(), normalized.end(), true) == x.rank() - first) {
    Tensor y = x;
    layer_norm_trailing(y, x.rank() - first, gamma, beta, eps);
    return y;
  }

  // General case: element -> (group, parameter) via coordinate decode.
  Index group_size = 1, groups = 1;
  for (Index i = 0; i < x.rank(); ++i) (normalized[static_cast<size_t>(i)] ? group_size : groups) *= x.dim(i);
  require(gamma.size() == group_size && beta.size() == group_size, Errc::invalid_shape,
          "layer_norm: gamma/beta must match the normalized dims");
  std::vector<Index> group_of(static_cast<size_t>(x.size())), param_of(static_cast<size_t>(x.size()));
  std::vector<Index> coord(static_cast<size_t>(x.rank()), 0);
  for (Index e = 0; e < x.size(); ++e) {
    Index g = 0, p = 0;
    for (Index i = 0; i < x.rank(); ++i) {
      if (normalized[static_cast<size_t>(i)])
        p = p * x.dim(i) + coord[static_cast<size_t>(i)];
      else
        g = g * x.dim(i) + coord[static_cast<size_t>(i)];
    }
    group_of[static_cast<size_t>(e)] = g;
    param_of[static_cast<size_t>(e)] = p;
    for (Index i = x.rank() - 1; i >= 0; --i) {
      if (++coord[static_cast<size_t>(i)] < x.dim(i)) break;
      coord[static_cast<size_t>(i)] = 0;
    }
  }
  std::vector<double> mean(static_cast<size_t>(groups), 0.0), var(static_cast<size_t>(groups), 0.0);
  for (Index e = 0; e < x.size(); ++e) mean[static_cast<size_t>(group_of[static_cast<size_t>(e)])] += x[e];
  for (auto& m : mean) m /= static_cast<double>(group_size);
  for (Index e = 0; e < x.size(); ++e) {
    const double d = x[e] - mean[static_cast<size_t>(group_of[static_cast<size_t>(e)])];
    var[static_cast<size_t>(group_of[static_cast<size_t>(e)])] += d * d;
  }
  Tensor y(x.shape());
  for (Index e = 0; e < x.size(); ++e) {
    const auto g = static_cast<size_t>(group_of[static_cast<size_t>(e)]);
    const Index p = param_of[static_cast<size_t>(e)];
    const double inv = 1.0 / std::sqrt(var[g] / static_cast<double>(group_size) + static_cast<double>(eps));
    y[e] = static_cast<float>((x[e] - mean[g]) * inv) * gamma[p] + beta[p];
  }
  return y;
}

// ---------------------------------------------------------------- LSTM

Lstm::Lstm(const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias) {
  require_rank(w_ih, 2, "lstm w_ih");
  require_rank(w_hh, 2, "lstm w_hh");
  require(w_ih.dim(0) % 4 == 0, Errc::invalid_shape, "lstm: w_ih rows must be 4H");
  hidden_ = w_ih.dim(0) / 4;
  input_ = w_ih.dim(1);
  require(w_hh.dim(0) == 4 * hidden_ && w_hh.dim(1) == hidden_, Errc::invalid_shape, "lstm: w_hh must be [4H, H]");
  require(bias.size() == 4 * hidden_, Errc::invalid_shape, "lstm: bias must have 4H entries");
  w_ih_t_ = w_ih.matrix(4 * hidden_, input_).transpose();
  w_hh_t_ = w_hh.matrix(4 * hidden_, hidden_).transpose();
  bias_ = Eigen::Map<const Eigen::RowVectorXf>(bias.data(), 4 * hidden_);
}

RowMatrixXf Lstm::project(const Eigen::Ref<const RowMatrixXf>& x) const {
  require(x.cols() == input_, Errc::invalid_shape, "lstm: input width mismatch");
  RowMatrixXf gates(x.rows(), 4 * hidden_);
  gates.noalias() = x * w_ih_t_;
  gates.rowwise() += bias_;
  return gates;
}

void Lstm::step_projected(const Eigen::Ref<const RowMatrixXf>& projected, RowMatrixXf& h, RowMatrixXf& c) const {
  require(projected.cols() == 4 * hidden_, Errc::invalid_shape, "lstm: projected input width mismatch");
  const Index n = projected.rows(), hs = hidden_;
  if (h.rows() != n || h.cols() != hs) h = RowMatrixXf::Zero(n, hs);
  if (c.rows() != n || c.cols() != hs) c = RowMatrixXf::Zero(n, hs);
  RowMatrixXf gates = projected;
  gates.noalias() += h * w_hh_t_;
  // Vectorized gate nonlinearities over the whole batch.
  const auto a = gates.array();
  c.array() = a.middleCols(hs, hs).logistic() * c.array() + a.leftCols(hs).logistic() * a.middleCols(2 * hs, hs).tanh();
  h.array() = a.rightCols(hs).logistic() * c.array().tanh();
}

void Lstm::step(const Eigen::Ref<const RowMatrixXf>& x, RowMatrixXf& h, RowMatrixXf& c) const {
  step_projected(project(x), h, c);
}

Tensor lstm_forward(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias,
                    Direction direction) {
  require_rank(x, 2, "lstm input");
  const Lstm cell(w_ih, w_hh, bias);
  require(x.dim(1) == cell.input_size(), Errc::invalid_shape, "lstm: input width mismatch");
  const Index steps = x.dim(0), hs = cell.hidden_size();
  Tensor y({steps, hs});
  RowMatrixXf h = RowMatrixXf::Zero(1, hs), c = RowMatrixXf::Zero(1, hs);
  ConstMatrixMap in = x.matrix(steps, x.dim(1));
  MatrixMap out = y.matrix(steps, hs);
  for (Index s = 0; s < steps; ++s) {
    const Index t = direction == Direction::forward ? s : steps - 1 - s;
    cell.step(in.row(t), h, c);
    out.row(t) = h;
  }
  return y;
}

// ---------------------------------------------------------------- attention

namespace {

// Softmax over scores[0..n) in place with max subtraction; sum in double.
void softmax(float* scores, Index n) {
  float mx = -std::numeric_limits<float>::infinity();
  for (Index i = 0; i < n; ++i) mx = std::max(mx, scores[i]);
  double sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    scores[i] = std::exp(scores[i] - mx);
    sum += scores[i];
  }
  const auto inv = static_cast<float>(1.0 / sum);
  for (Index i = 0; i < n; ++i) scores[i] *= inv;
}

}  // namespace

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, Index heads, bool causal) {
  require_rank(q, 2, "attention q");
  require_rank(k, 2, "attention k");
  require_rank(v, 2, "attention v");
  require(heads >= 1 && q.dim(1) % heads == 0 && v.dim(1) % heads == 0, Errc::invalid_shape,
          "attention: widths must be divisible by heads");
  require(q.dim(1) == k.dim(1) && k.dim(0) == v.dim(0), Errc::invalid_shape, "attention: q/k/v shape mismatch");
  require(!causal || q.dim(0) == k.dim(0), Errc::invalid_shape, "attention: causal mask needs equal lengths");
  require(q.all_finite() && k.all_finite() && v.all_finite(), Errc::invalid_input, "attention: non-finite input");

  const Index tq = q.dim(0), tk = k.dim(0), dk = q.dim(1) / heads, dv = v.dim(1) / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dk));
  ConstMatrixMap qm = q.matrix(tq, q.dim(1)), km = k.matrix(tk, k.dim(1)), vm = v.matrix(tk, v.dim(1));
  Tensor out({tq, heads * dv});
  MatrixMap om = out.matrix(tq, heads * dv);
  RowMatrixXf scores(tq, tk);
  for (Index h = 0; h < heads; ++h) {
    scores.noalias() = qm.middleCols(h * dk, dk) * km.middleCols(h * dk, dk).transpose();
    scores *= scale;
    for (Index t = 0; t < tq; ++t) {
      const Index visible = causal ? t + 1 : tk;
      softmax(scores.row(t).data(), visible);
      scores.row(t).tail(tk - visible).setZero();
    }
    om.middleCols(h * dv, dv).noalias() = scores * vm.middleCols(h * dv, dv);
  }
  return out;
}

void AttentionCache::append(std::span<const float> key, std::span<const float> value) {
  require(static_cast<Index>(key.size()) == heads_ * dk_ && static_cast<Index>(value.size()) == heads_ * dv_,
          Errc::invalid_shape, "attention cache: row width mismatch");
  keys_.insert(keys_.end(), key.begin(), key.end());
  values_.insert(values_.end(), value.begin(), value.end());
  ++length_;
}

void AttentionCache::attend(std::span<const float> query, std::span<float> out) const {
  require(static_cast<Index>(query.size()) == heads_ * dk_ && static_cast<Index>(out.size()) == heads_ * dv_,
          Errc::invalid_shape, "attention cache: query width mismatch");
  require(length_ > 0, Errc::contract_violation, "attention cache: empty");
  for (float f : query) require(std::isfinite(f), Errc::invalid_input, "attention: non-finite input");
  const float scale = 1.0f / std::sqrt(static_cast<float>(dk_));
  ConstMatrixMap km(keys_.data(), length_, heads_ * dk_);
  ConstMatrixMap vm(values_.data(), length_, heads_ * dv_);
  Eigen::Map<const Eigen::RowVectorXf> qv(query.data(), heads_ * dk_);
  Eigen::Map<Eigen::RowVectorXf> ov(out.data(), heads_ * dv_);
  Eigen::RowVectorXf scores(length_);
  for (Index h = 0; h < heads_; ++h) {
    scores.noalias() = qv.segment(h * dk_, dk_) * km.middleCols(h * dk_, dk_).transpose();
    scores *= scale;
    softmax(scores.data(), length_);
    ov.segment(h * dv_, dv_).noalias() = scores * vm.middleCols(h * dv_, dv_);
  }
}

// ---------------------------------------------------------------- FiLM

Film::Film(const Tensor& w_gamma, const Tensor& b_gamma, const Tensor& w_beta, const Tensor& b_beta) {
  require_rank(w_gamma, 2, "film w_gamma");
  require_rank(w_beta, 2, "film w_beta");
  require(w_gamma.shape() == w_beta.shape(), Errc::invalid_shape, "film: projection shapes differ");
  const Index d = w_gamma.dim(0), e = w_gamma.dim(1);
  require(b_gamma.size() == d && b_beta.size() == d, Errc::invalid_shape, "film: bias length must equal channels");
  w_gamma_ = w_gamma.matrix(d, e);
  w_beta_ = w_beta.matrix(d, e);
  b_gamma_ = Eigen::Map<const Eigen::VectorXf>(b_gamma.data(), d);
  b_beta_ = Eigen::Map<const Eigen::VectorXf>(b_beta.data(), d);
}

Film::Modulation Film::modulation(std::span<const float> embedding) const {
  require(static_cast<Index>(embedding.size()) == embedding_size(), Errc::invalid_shape,
          "film: embedding length " + std::to_string(embedding.size()) + " != " + std::to_string(embedding_size()));
  Eigen::Map<const Eigen::VectorXf> e(embedding.data(), embedding_size());
  Modulation m;
  m.gamma = (w_gamma_ * e + b_gamma_).transpose();
  m.beta = (w_beta_ * e + b_beta_).transpose();
  return m;
}

void Film::apply(const Modulation& m, MatrixMap frame) {
  frame.array().rowwise() *= m.gamma.array();
  frame.rowwise() += m.beta;
}

Tensor film(const Tensor& x, std::span<const float> embedding, const Tensor& w_gamma, const Tensor& b_gamma,
            const Tensor& w_beta, const Tensor& b_beta) {
  require_rank(x, 3, "film input");
  const Film layer(w_gamma, b_gamma, w_beta, b_beta);
  require(x.dim(2) == layer.channels(), Errc::invalid_shape, "film: channel mismatch");
  const auto m = layer.modulation(embedding);
  Tensor y = x;
  for (Index t = 0; t < y.dim(0); ++t) Film::apply(m, y.frame(t));
  return y;
}

}  // namespace hearx::nn

#pragma once

#include <Eigen/Core>
#include <Eigen/LU>
#include <cmath>
#include <complex>
#include <vector>

#include "hearx/error.hpp"

namespace hearx::beamform {

using Eigen::Index;

struct McwfConfig {
  double alpha = 0.5;     // forgetting factor
  double loading = 1e-4;  // diagonal loading as a fraction of trace / C

  void validate() const {
    require(std::isfinite(alpha) && std::abs(alpha) < 1.0, Errc::invalid_config, "mcwf: |alpha| must be below 1");
    require(std::isfinite(loading) && loading >= 0.0, Errc::invalid_config, "mcwf: loading must be non-negative");
  }
};

/// Recursively averaged spatial statistics of one frequency bin.
///
/// phi_yy <- a phi_yy + (1 - a) y y^H and phi_ys <- a phi_ys + (1 - a) y conj(s),
/// both starting from zero.
template <typename Scalar>
class CovarianceState {
 public:
  using Complex = std::complex<Scalar>;
  using Matrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Complex, Eigen::Dynamic, 1>;

  CovarianceState() = default;
  CovarianceState(Index channels, const McwfConfig& cfg)
      : cfg_(cfg), phi_yy_(Matrix::Zero(channels, channels)), phi_ys_(Vector::Zero(channels)) {
    cfg_.validate();
    require(channels >= 1, Errc::invalid_config, "mcwf: need at least one channel");
  }

  Index channels() const { return phi_ys_.size(); }
  Index updates() const { return updates_; }
  const Matrix& phi_yy() const { return phi_yy_; }
  const Vector& phi_ys() const { return phi_ys_; }
  /// Set when the last solve hit an all-zero (trace 0) covariance.
  bool singular() const { return singular_; }

  void update(const Eigen::Ref<const Vector>& y, Complex s_hat) {
    require(y.size() == channels(), Errc::invalid_input, "mcwf: observation has the wrong channel count");
    require(y.allFinite() && std::isfinite(s_hat.real()) && std::isfinite(s_hat.imag()), Errc::invalid_input,
            "mcwf: non-finite observation");
    const Scalar a = static_cast<Scalar>(cfg_.alpha), b = Scalar(1) - a;
    phi_yy_ = a * phi_yy_ + b * (y * y.adjoint());
    // Keep the statistic exactly Hermitian.
    for (Index i = 0; i < channels(); ++i) {
      phi_yy_(i, i).imag(0);
      for (Index j = 0; j < i; ++j) phi_yy_(i, j) = std::conj(phi_yy_(j, i));
    }
    phi_ys_ = a * phi_ys_ + b * y * std::conj(s_hat);
    ++updates_;
  }

  /// w = (phi_yy + loading * trace / C * I)^-1 phi_ys; zero when the trace is 0.
  Vector solve() {
    const Scalar trace = phi_yy_.diagonal().real().sum();
    singular_ = !(trace > Scalar(0));
    if (singular_) return Vector::Zero(channels());
    Matrix loaded = phi_yy_;
    loaded.diagonal().array() += Complex(static_cast<Scalar>(cfg_.loading) * trace / static_cast<Scalar>(channels()));
    return loaded.partialPivLu().solve(phi_ys_);
  }

 private:
  McwfConfig cfg_;
  Matrix phi_yy_;
  Vector phi_ys_;
  Index updates_ = 0;
  bool singular_ = false;
};

/// Filter-and-sum output w^H y.
template <typename Scalar>
std::complex<Scalar> apply(const Eigen::Ref<const Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>>& w,
                           const Eigen::Ref<const Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>>& y) {
  require(w.size() == y.size(), Errc::invalid_shape, "mcwf: filter and observation lengths differ");
  return w.dot(y);  // Eigen's dot conjugates the first argument
}

/// Frame-online multi-channel Wiener filter over all bins of one stream.
template <typename Scalar>
class Mcwf {
 public:
  using Complex = std::complex<Scalar>;
  using Vector = Eigen::Matrix<Complex, Eigen::Dynamic, 1>;
  using Frame = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Mcwf(Index bins, Index channels, const McwfConfig& cfg = {})
      : states_(static_cast<size_t>(bins), CovarianceState<Scalar>(channels, cfg)) {}

  Index bins() const { return static_cast<Index>(states_.size()); }
  const CovarianceState<Scalar>& state(Index bin) const { return states_[static_cast<size_t>(bin)]; }
  /// Bins whose last solve took the silence branch.
  Index singular_bins() const { return singular_bins_; }

  /// Updates every bin with (y, s_hat), re-solves and filters the same frame.
  Vector process(const Eigen::Ref<const Frame>& y, const Eigen::Ref<const Vector>& s_hat) {
    require(y.rows() == bins() && s_hat.size() == bins(), Errc::invalid_shape, "mcwf: frame has the wrong bin count");
    Vector out(bins());
    singular_bins_ = 0;
    for (Index f = 0; f < bins(); ++f) {
      auto& st = states_[static_cast<size_t>(f)];
      const Vector yf = y.row(f).transpose();
      st.update(yf, s_hat[f]);
      const Vector w = st.solve();
      singular_bins_ += st.singular() ? 1 : 0;
      out[f] = apply<Scalar>(w, yf);
    }
    return out;
  }

 private:
  std::vector<CovarianceState<Scalar>> states_;
  Index singular_bins_ = 0;
};

}  // namespace hearx::beamform

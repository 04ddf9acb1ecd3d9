#include "doctest.h"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "hearx/beamform/mcwf.hpp"
#include "hearx/metrics/metrics.hpp"
#include "hearx/nn/rng.hpp"
#include "hearx/pipeline/pipeline.hpp"
#include "hearx/pipeline/scene.hpp"

using namespace hearx;
using namespace hearx::beamform;
using Complex = std::complex<double>;
using Vector = Eigen::VectorXcd;
using Matrix = Eigen::MatrixXcd;

namespace {

Complex random_complex(nn::SplitMix64& rng) { return {rng.uniform(-1, 1), rng.uniform(-1, 1)}; }

Vector random_vector(Index n, nn::SplitMix64& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = random_complex(rng);
  return v;
}

}  // namespace

TEST_CASE("single-channel statistics") {
  CovarianceState<double> st(1, McwfConfig{});
  Vector y(1);
  y[0] = 1.0;
  st.update(y, 1.0);
  CHECK(st.phi_yy()(0, 0) == Complex(0.5));
  CHECK(st.phi_ys()[0] == Complex(0.5));
  CHECK(st.updates() == 1);

  // A silent frame only decays the statistics.
  st.update(Vector::Zero(1), 0.0);
  CHECK(st.phi_yy()(0, 0) == Complex(0.25));
  CHECK(st.phi_ys()[0] == Complex(0.25));
}

TEST_CASE("recursive statistics match the closed-form weighted sums") {
  for (double alpha : {0.5, 0.9, -0.3}) {
    const Index c = 3, n = 1000;
    McwfConfig cfg;
    cfg.alpha = alpha;
    CovarianceState<double> st(c, cfg);
    nn::SplitMix64 rng(17);
    std::vector<Vector> ys;
    std::vector<Complex> ss;
    for (Index k = 0; k < n; ++k) {
      ys.push_back(random_vector(c, rng));
      ss.push_back(random_complex(rng));
      st.update(ys.back(), ss.back());
    }
    Matrix phi_yy = Matrix::Zero(c, c);
    Vector phi_ys = Vector::Zero(c);
    for (Index k = 0; k < n; ++k) {
      const double w = (1 - alpha) * std::pow(alpha, static_cast<double>(n - 1 - k));
      phi_yy += w * ys[static_cast<size_t>(k)] * ys[static_cast<size_t>(k)].adjoint();
      phi_ys += w * ys[static_cast<size_t>(k)] * std::conj(ss[static_cast<size_t>(k)]);
    }
    CHECK((st.phi_yy() - phi_yy).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((st.phi_ys() - phi_ys).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("statistics stay Hermitian positive semi-definite") {
  CovarianceState<double> st(4, McwfConfig{});
  nn::SplitMix64 rng(3);
  for (int k = 0; k < 200; ++k) {
    st.update(random_vector(4, rng), random_complex(rng));
    const Matrix& p = st.phi_yy();
    CHECK((p - p.adjoint()).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(p);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-12);
  }
}

TEST_CASE("filter solution") {
  SUBCASE("estimate equal to the single observation gives unit gain") {
    McwfConfig exact;
    exact.loading = 0.0;
    CovarianceState<double> st(1, exact);
    Vector y(1);
    y[0] = Complex(0.3, -0.7);
    st.update(y, y[0]);
    CHECK(std::abs(st.solve()[0] - 1.0) <= 1e-12);

    CovarianceState<double> loaded(1, McwfConfig{});
    loaded.update(y, y[0]);
    CHECK(std::abs(loaded.solve()[0] - 1.0) <= 2e-4);
  }
  SUBCASE("estimate equal to one channel selects that channel") {
    McwfConfig exact;
    exact.loading = 0.0;
    CovarianceState<double> st(3, exact);
    nn::SplitMix64 rng(8);
    for (int k = 0; k < 20; ++k) {
      const Vector y = random_vector(3, rng);
      st.update(y, y[1]);
    }
    const Vector w = st.solve();
    CHECK(std::abs(w[0]) <= 1e-9);
    CHECK(std::abs(w[1] - 1.0) <= 1e-9);
    CHECK(std::abs(w[2]) <= 1e-9);
  }
  SUBCASE("all-zero statistics give a zero filter and raise the flag") {
    CovarianceState<double> st(2, McwfConfig{});
    CHECK(st.solve() == Vector::Zero(2));
    CHECK(st.singular());
    st.update(Vector::Zero(2), 0.0);
    CHECK(st.solve() == Vector::Zero(2));
    Vector y(2);
    y << 1.0, 2.0;
    st.update(y, 1.0);
    st.solve();
    CHECK_FALSE(st.singular());
  }
  SUBCASE("invalid input") {
    CovarianceState<double> st(2, McwfConfig{});
    CHECK_THROWS_AS(st.update(Vector::Zero(3), 0.0), Error);
    Vector y = Vector::Zero(2);
    y[0] = Complex(std::nan(""), 0);
    CHECK_THROWS_AS(st.update(y, 0.0), Error);
    McwfConfig bad;
    bad.alpha = 1.0;
    CHECK_THROWS_AS(CovarianceState<double>(2, bad), Error);
  }
}

TEST_CASE("filter-and-sum conjugates the filter") {
  Vector w(2), y(2);
  w << Complex(0, 1), Complex(2, 0);
  y << Complex(1, 0), Complex(0, 1);
  // conj(i) * 1 + 2 * i = -i + 2i = i
  CHECK(apply<double>(w, y) == Complex(0, 1));
  CHECK_THROWS_AS(apply<double>(w, Vector::Zero(3)), Error);
}

TEST_CASE("tracks a moving source within twenty frames") {
  const Index c = 4, bins = 8, frames = 80;
  Mcwf<double> mcwf(bins, c, McwfConfig{});
  nn::SplitMix64 rng(21);
  const Matrix a1 = Matrix::NullaryExpr(c, bins, [&] { return random_complex(rng); });
  const Matrix a2 = Matrix::NullaryExpr(c, bins, [&] { return random_complex(rng); });
  for (Index k = 0; k < frames; ++k) {
    const Matrix& a = k < frames / 2 ? a1 : a2;
    Mcwf<double>::Frame y(bins, c);
    Vector s(bins);
    for (Index f = 0; f < bins; ++f) {
      s[f] = random_complex(rng);
      for (Index ch = 0; ch < c; ++ch) y(f, ch) = a(ch, f) * s[f] + 1e-3 * random_complex(rng);
    }
    const Vector out = mcwf.process(y, s);
    const Index since_change = k < frames / 2 ? k : k - frames / 2;
    if (since_change >= 20) CHECK((out - s).squaredNorm() / s.squaredNorm() < 1e-2);
  }
  CHECK(mcwf.singular_bins() == 0);
}

TEST_CASE("an oracle target estimate drives a useful beamformer") {
  pipeline::SceneSpec spec;
  spec.channels = 4;
  spec.duration_s = 2.0;
  spec.snr_db = 0.0;
  spec.seed = 5;
  const auto scene = pipeline::simulate_scene(spec);
  const Eigen::VectorXd out = pipeline::beamform_with_estimate(scene.mixture, scene.target_ref, pipeline::PipelineConfig{});
  const Eigen::VectorXd mix = scene.mixture.col(0);
  const double gain = metrics::si_sdr(out, scene.target_ref) - metrics::si_sdr(mix, scene.target_ref);
  MESSAGE("oracle-estimate beamformer improvement: " << gain << " dB");
  CHECK(gain >= 5.0);
}

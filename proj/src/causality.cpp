#include "hearx/dsp/causality.hpp"

#include "hearx/nn/rng.hpp"

namespace hearx::dsp {

CausalityHarness::CausalityHarness(StreamProcessor processor, SignalMatrix<double> input, double tolerance)
    : processor_(std::move(processor)), input_(std::move(input)), tolerance_(tolerance) {
  reference_ = processor_(input_);
  require(reference_.rows() == input_.rows() && reference_.cols() >= 1, Errc::contract_violation,
          "causality_check: processor must return one row per input sample");
  const SignalMatrix<double> again = processor_(input_);
  require(again.rows() == reference_.rows() && again.cols() == reference_.cols() &&
              (again - reference_).cwiseAbs().maxCoeff() <= tolerance_,
          Errc::indeterminate, "causality_check: processor is not deterministic");
}

CausalityReport CausalityHarness::trial(Index perturb_index, Index budget, std::uint64_t seed) const {
  require(perturb_index >= 0 && perturb_index < input_.rows(), Errc::invalid_input,
          "causality_check: perturbation index outside the signal");
  require(budget >= 0, Errc::invalid_input, "causality_check: negative budget");

  SignalMatrix<double> perturbed = input_;
  nn::SplitMix64 rng(seed);
  for (Index t = perturb_index; t < perturbed.rows(); ++t)
    for (Index c = 0; c < perturbed.cols(); ++c) {
      // Magnitude in [0.25, 0.5) with random sign: sample n always changes.
      const double mag = 0.25 + 0.25 * rng.uniform();
      perturbed(t, c) += (rng.next() & 1u) ? mag : -mag;
    }

  const SignalMatrix<double> out = processor_(perturbed);
  require(out.rows() == reference_.rows() && out.cols() == reference_.cols(), Errc::contract_violation,
          "causality_check: processor changed output shape");

  CausalityReport report;
  report.perturb_index = perturb_index;
  report.budget = budget;
  report.first_diff_index = out.rows();
  for (Index t = 0; t < out.rows(); ++t) {
    if ((out.row(t) - reference_.row(t)).cwiseAbs().maxCoeff() > tolerance_) {
      report.first_diff_index = t;
      break;
    }
  }
  const Index safe = std::max<Index>(0, std::min<Index>(perturb_index - budget, out.rows()));
  if (safe > 0) report.max_abs_diff_before = (out.topRows(safe) - reference_.topRows(safe)).cwiseAbs().maxCoeff();
  report.pass = report.first_diff_index >= perturb_index - budget;
  report.sensitive = report.first_diff_index < out.rows();
  return report;
}

CausalityReport causality_check(const StreamProcessor& processor, const SignalMatrix<double>& input,
                                Index perturb_index, Index budget, std::uint64_t seed) {
  return CausalityHarness(processor, input).trial(perturb_index, budget, seed);
}

}  // namespace hearx::dsp

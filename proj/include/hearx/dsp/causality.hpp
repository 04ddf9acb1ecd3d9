#pragma once

#include <Eigen/Core>
#include <functional>

#include "hearx/dsp/stft.hpp"

namespace hearx::dsp {

/// Maps an N x C input to N output samples per tap (N x taps; one column for
/// a plain mono processor).
using StreamProcessor = std::function<SignalMatrix<double>(const SignalMatrix<double>&)>;

struct CausalityReport {
  Index perturb_index = 0;
  Index budget = 0;
  Index first_diff_index = 0;  // earliest sample where any tap differs; output length if none
  double max_abs_diff_before = 0.0;  // over t < perturb_index - budget
  bool pass = false;     // no difference before perturb_index - budget
  bool sensitive = false;  // some tap reacted at all; a causal pass without it proves nothing
};

/// Perturbation-based algorithmic-latency check.
///
/// The reference output is computed once (twice, to confirm determinism); each
/// trial replaces the input from the perturbation index onwards and compares.
class CausalityHarness {
 public:
  static constexpr double kTolerance = 1e-7;

  CausalityHarness(StreamProcessor processor, SignalMatrix<double> input, double tolerance = kTolerance);

  const SignalMatrix<double>& input() const { return input_; }
  const SignalMatrix<double>& reference_output() const { return reference_; }

  CausalityReport trial(Index perturb_index, Index budget, std::uint64_t seed) const;

 private:
  StreamProcessor processor_;
  SignalMatrix<double> input_;
  SignalMatrix<double> reference_;
  double tolerance_;
};

/// Single-trial convenience wrapper.
CausalityReport causality_check(const StreamProcessor& processor, const SignalMatrix<double>& input,
                                Index perturb_index, Index budget, std::uint64_t seed = 1);

}  // namespace hearx::dsp

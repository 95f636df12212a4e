#pragma once

// Scoring trained extractors on synthetic examples, including the
// mixing-ratio ablation (w/ vs w/o MR) and the start-coordinate sweep.

#include <optional>
#include <string>
#include <vector>

#include "aftse/inference.hpp"
#include "aftse/metrics.hpp"
#include "aftse/synth_data.hpp"

namespace aftse {

/// Where the one-step jump starts.
struct TauChoice {
  enum class Kind { Zero, Predicted, Oracle, Fixed };
  Kind kind = Kind::Zero;
  double value = 0.0;  ///< offset from tau* for Oracle, the coordinate itself for Fixed

  static TauChoice zero() { return {Kind::Zero, 0.0}; }
  static TauChoice predicted() { return {Kind::Predicted, 0.0}; }
  static TauChoice oracle(double offset = 0.0) { return {Kind::Oracle, offset}; }
  static TauChoice fixed(double tau) { return {Kind::Fixed, tau}; }
};

struct EvalOptions {
  InferenceConfig inference;
  std::size_t max_examples = 0;  ///< 0 = all
  std::size_t workers = 1;
};

/// Scores one condition over `examples`.
EvalReport evaluate(const Extractor& ex, PathKind kind, const std::vector<MixtureExample>& examples,
                    TauChoice tau, std::string condition, const EvalOptions& opts);

/// Scores the clean target itself as the estimate (every SI-SDR hits the ceiling).
EvalReport evaluate_reference(const std::vector<MixtureExample>& examples, const EvalOptions& opts);

struct SensitivityOptions {
  EvalOptions eval;
  std::vector<double> offsets{-0.3, -0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2, 0.3};
};

/// Ablation over both path kinds. The mixture-to-target model always jumps
/// from 0, so its w/ and w/o rows share one inference path. The
/// background-to-target model uses the MR prediction (or tau* when no
/// regressor is given) for "w/ MR" and tau = 0 for "w/o MR". Also records
/// the tau* condition and a sweep of start offsets around tau*.
SensitivityReport mr_sensitivity_report(const Extractor& mixture_model, const Extractor& background_model,
                                        const std::vector<MixtureExample>& examples,
                                        const SensitivityOptions& opts);

}  // namespace aftse

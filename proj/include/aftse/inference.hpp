#pragma once

// One-step (NFE = 1) extraction and chunked utterance processing.

#include <optional>

#include "aftse/predictor.hpp"

namespace aftse {

struct InferenceConfig {
  Eigen::Index chunk_frames = 0;  ///< 0 processes the whole utterance at once
  bool use_mr = false;
  std::optional<double> forced_tau;  ///< overrides the MR predictor when set
  StftConfig stft = StftConfig::desk();

  void validate() const;
};

/// S_hat = Y + u(Y, 0, 1; E). Exactly one network evaluation.
Spectrogram extract_one_step(const VelocityModel& model, const ParamStore& params, const Spectrogram& mixture,
                             const Spectrogram& enroll);

/// Jump from coordinate tau to 1: S_hat = Y + (1 - tau) u(Y, tau, 1; E).
/// tau = 0 coincides with extract_one_step; tau = 1 returns Y.
Spectrogram jump_from(const VelocityModel& model, const ParamStore& params, const Spectrogram& mixture,
                      const Spectrogram& enroll, double tau);

/// A velocity model with its parameters, plus an optional MR regressor.
struct Extractor {
  const VelocityModel* model = nullptr;
  const ParamStore* params = nullptr;
  const MrRegressor* mr = nullptr;
  const ParamStore* mr_params = nullptr;

  bool has_mr() const { return mr != nullptr && mr_params != nullptr; }
};

struct MrExtraction {
  Spectrogram estimate;
  double tau = 0.0;  ///< coordinate the jump started from
};

/// tau_hat = sigmoid(p_phi(y, e)) (or `forced_tau`), then a single jump from tau_hat.
MrExtraction extract_one_step_mr(const Extractor& ex, const Waveform& y, const Waveform& e,
                                 const Spectrogram& mixture, const Spectrogram& enroll,
                                 std::optional<double> forced_tau = std::nullopt);

struct UtteranceResult {
  Waveform estimate;
  Spectrogram spectrum;
  double tau = 0.0;
  std::size_t chunks = 0;
};

/// stft -> per-chunk one-step jump (same enrollment, same start coordinate)
/// -> concatenation -> istft. Output length equals the mixture length.
UtteranceResult extract_utterance(const Extractor& ex, const Waveform& y, const Waveform& e,
                                  const InferenceConfig& cfg);

}  // namespace aftse

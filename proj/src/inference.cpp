#include "aftse/inference.hpp"

#include "aftse/errors.hpp"

namespace aftse {

void InferenceConfig::validate() const {
  if (chunk_frames < 0) throw ValidationError("inference: chunk_frames must be >= 0");
  if (forced_tau && !(*forced_tau >= 0.0 && *forced_tau <= 1.0)) {
    throw ValidationError("inference: forced tau must lie in [0, 1]");
  }
  stft.validate();
}

Spectrogram extract_one_step(const VelocityModel& model, const ParamStore& params, const Spectrogram& mixture,
                             const Spectrogram& enroll) {
  return mixture + mean_velocity(model, params, mixture, enroll, 0.0, 1.0);
}

Spectrogram jump_from(const VelocityModel& model, const ParamStore& params, const Spectrogram& mixture,
                      const Spectrogram& enroll, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("jump_from: tau must lie in [0, 1]");
  if (tau == 0.0) return extract_one_step(model, params, mixture, enroll);
  return mixture + (1.0 - tau) * mean_velocity(model, params, mixture, enroll, tau, 1.0);
}

MrExtraction extract_one_step_mr(const Extractor& ex, const Waveform& y, const Waveform& e,
                                 const Spectrogram& mixture, const Spectrogram& enroll,
                                 std::optional<double> forced_tau) {
  MrExtraction out;
  if (forced_tau) {
    out.tau = *forced_tau;
  } else {
    if (!ex.has_mr()) throw ValidationError("extract_one_step_mr: no MR regressor and no forced tau");
    out.tau = mr_predict(*ex.mr, *ex.mr_params, y, e);
  }
  out.estimate = jump_from(*ex.model, *ex.params, mixture, enroll, out.tau);
  return out;
}

UtteranceResult extract_utterance(const Extractor& ex, const Waveform& y, const Waveform& e,
                                  const InferenceConfig& cfg) {
  cfg.validate();
  if (ex.model == nullptr || ex.params == nullptr) throw ValidationError("extract_utterance: no model");
  y.validate();
  e.validate();
  const Spectrogram mixture = stft(y, cfg.stft);
  const Spectrogram enroll = stft(e, cfg.stft);

  UtteranceResult out;
  if (cfg.forced_tau) {
    out.tau = *cfg.forced_tau;
  } else if (cfg.use_mr) {
    if (!ex.has_mr()) throw ValidationError("extract_utterance: MR mode requested without an MR regressor");
    out.tau = mr_predict(*ex.mr, *ex.mr_params, y, e);
  }

  const Eigen::Index frames = cfg.chunk_frames > 0 ? cfg.chunk_frames : mixture.cols();
  std::vector<Spectrogram> pieces = chunk(mixture, frames);
  for (auto& piece : pieces) piece = jump_from(*ex.model, *ex.params, piece, enroll, out.tau);
  out.chunks = pieces.size();
  out.spectrum = concat_time(pieces);
  out.estimate = istft(out.spectrum, cfg.stft, y.size(), y.sample_rate);
  return out;
}

}  // namespace aftse

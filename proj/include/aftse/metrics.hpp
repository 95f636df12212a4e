#pragma once

// Desk-scale evaluation metrics and report containers.

#include <filesystem>
#include <string>
#include <vector>

#include "aftse/spectral.hpp"
#include "aftse/trajectory.hpp"

namespace aftse {

inline constexpr double kSiSdrCeiling = 100.0;

/// Scale-invariant SDR in dB: est is projected onto ref, then
/// 10 log10(|target|^2 / |residual|^2). Clamped to [-ceiling, ceiling].
double si_sdr(const Eigen::Ref<const Eigen::VectorXd>& est, const Eigen::Ref<const Eigen::VectorXd>& ref,
              double ceiling = kSiSdrCeiling);
double si_sdr(const Waveform& est, const Waveform& ref, double ceiling = kSiSdrCeiling);

/// Fixed 64-dimensional speaker-cue embedding: long-term average
/// log-magnitude spectrum (64 bins), mean-removed and L2-normalised.
/// Invariant to gain and sign. A silent input gives the zero vector.
Eigen::VectorXd speaker_embedding(const Waveform& w);

/// Cosine similarity of speaker embeddings, in [-1, 1]; 0 (with a warning)
/// when either input is silent.
double spk_sim(const Waveform& est, const Waveform& anchor);

/// m(est - ref) over spectrograms of equal shape.
double spectral_mse(const Spectrogram& est, const Spectrogram& ref);

struct EvalRow {
  std::string id;
  int target_speaker = -1;
  int interferer_speaker = -1;
  double tau_star = 0.0;
  double tau_used = 0.0;  ///< start coordinate of the jump
  double si_sdr = 0.0;
  double si_sdr_mixture = 0.0;
  double si_sdr_improvement = 0.0;
  double spectral_mse = 0.0;
  double spk_sim_ref = 0.0;     ///< against the clean target
  double spk_sim_enroll = 0.0;  ///< against the enrollment
  double spk_sim_cross = 0.0;   ///< against the interferer (cross-speaker baseline)
};

struct EvalSummary {
  std::size_t count = 0;
  double si_sdr = 0.0;
  double si_sdr_mixture = 0.0;
  double si_sdr_improvement = 0.0;
  double spectral_mse = 0.0;
  double spk_sim_ref = 0.0;
  double spk_sim_enroll = 0.0;
  double spk_sim_cross = 0.0;
  double tau_abs_error = 0.0;  ///< mean |tau_used - tau_star|
};

struct EvalReport {
  std::string condition;  ///< e.g. "w/ MR", "w/o MR", "tau=tau*"
  PathKind path_kind = PathKind::MixtureToTarget;
  bool with_mr = false;
  std::vector<EvalRow> rows;

  EvalSummary summary() const;
};

void write_report_tsv(const std::filesystem::path& path, const std::vector<EvalReport>& reports);

/// One model's block of the ablation table: w/ vs w/o the MR predictor.
struct AblationBlock {
  std::string model;  ///< display name
  EvalReport with_mr;
  EvalReport without_mr;

  /// SI-SDR decline in dB (w/o minus w/), and relative declines in percent
  /// for the other metrics ((w/o - w/) / |w/| * 100).
  double si_sdr_decline() const;
  double spk_sim_decline_pct() const;
  double spectral_mse_change_pct() const;
};

struct SweepPoint {
  std::string series;
  double x = 0.0;  ///< offset of the start coordinate from tau*
  double y = 0.0;  ///< mean SI-SDR (dB)
};

struct SensitivityReport {
  std::vector<AblationBlock> blocks;
  std::vector<EvalReport> extra;  ///< additional conditions (e.g. the oracle start coordinate)
  std::vector<SweepPoint> sweep;
};

/// Human-readable table laid out as rows (w/, w/o, relative decline) per model.
std::string format_ablation_table(const SensitivityReport& report);
void write_ablation_tsv(const std::filesystem::path& path, const SensitivityReport& report);
/// Plot-ready "series\tx\ty" rows.
void write_sweep_tsv(const std::filesystem::path& path, const SensitivityReport& report);

}  // namespace aftse

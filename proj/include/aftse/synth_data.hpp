#pragma once

// Synthetic two-talker mixtures with exact ground truth. "Speakers" are
// harmonic complexes whose fundamentals live in disjoint bands and whose
// harmonic amplitudes follow a speaker-specific envelope. Every example
// satisfies y = (1 - tau*) b + tau* s sample-wise, so the mixture sits
// exactly on the background-to-target path at tau*.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aftse/schedules.hpp"
#include "aftse/spectral.hpp"

namespace aftse {

struct SyntheticSpeaker {
  int id = 0;
  double f0_lo = 100.0;  ///< fundamental band [f0_lo, f0_hi] in Hz
  double f0_hi = 110.0;
  Eigen::VectorXd harmonic_weights;  ///< amplitude of harmonic h+1 (before envelope jitter)
  double am_rate = 3.0;   ///< Hz
  double am_depth = 0.3;
  double fm_rate = 5.0;   ///< Hz
  double fm_depth = 0.01;  ///< relative frequency excursion
};

struct SynthConfig {
  int sample_rate = 8000;
  int n_speakers = 24;
  double f0_min = 200.0;
  double f0_max = 1600.0;
  double band_fill = 0.5;  ///< fraction of each log band a speaker's f0 may occupy
  double duration_s = 0.064;       ///< train/val mixture length
  double test_duration_s = 0.128;  ///< test mixture length (exercises chunking)
  double enroll_duration_s = 0.064;
  double tau_min = 0.3;
  double tau_max = 0.7;
  double level = 0.1;        ///< RMS of each source before mixing
  double noise_level = 0.0;  ///< RMS of band-limited noise folded into b, relative to level
  int n_train = 2000;
  int n_val = 100;
  int n_test = 200;

  Eigen::Index samples(double seconds) const;
  void validate() const;
};

enum class Split { Train, Val, Test };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct MixtureExample {
  Waveform mixture;     ///< y
  Waveform target;      ///< s
  Waveform background;  ///< b (interferer plus optional noise)
  Waveform enrollment;  ///< e, a separate realisation of the target speaker
  double tau_star = 0.5;
  int target_speaker = -1;
  int interferer_speaker = -1;
  double noise_rms = 0.0;
  Split split = Split::Train;
};

/// Deterministic speaker bank; speaker k owns the k-th log-spaced f0 band.
std::vector<SyntheticSpeaker> make_speakers(const SynthConfig& cfg, std::uint64_t seed);

/// Speaker ids assigned to a split (disjoint across splits).
std::vector<int> speakers_in(Split split, int n_speakers);

/// One realisation of a speaker: random f0 inside the band, random phases,
/// AM/FM envelopes and onset/offset gating, normalised to `rms`.
Eigen::VectorXd render_speaker(const SyntheticSpeaker& spk, Eigen::Index n, int sample_rate, double rms, Rng& rng);

MixtureExample generate_example(const SyntheticSpeaker& target, const SyntheticSpeaker& interferer, Rng& rng,
                                const SynthConfig& cfg, double duration_s);

struct Dataset {
  SynthConfig config;
  std::uint64_t seed = 0;
  std::vector<SyntheticSpeaker> speakers;
  std::vector<MixtureExample> train, val, test;

  const std::vector<MixtureExample>& split(Split s) const;
};

Dataset generate_dataset(const SynthConfig& cfg, std::uint64_t seed);

// On-disk layout:
//   <dir>/manifest.jsonl  one JSON object per example:
//     id, split, target_speaker, interferer_speaker, tau_star, duration_s,
//     sample_rate, noise_rms, mixture, target, background, enrollment
//     (the last four are paths relative to <dir>)
//   <dir>/<split>/<id>_{mix,target,background,enroll}.wav  (64-bit float WAVE)
//   <dir>/dataset.json  generator config, seed and speaker bank
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace aftse

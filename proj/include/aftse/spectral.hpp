#pragma once

// Complex STFT front end. Spectra are stored as real matrices of shape
// (2F, T): rows [0, F) hold real parts, rows [F, 2F) imaginary parts, and
// each column is one frame. This is the layout every other module consumes.

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "aftse/errors.hpp"

namespace aftse {

template <typename Scalar>
using SpectrogramT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Spectrogram = SpectrogramT<double>;

struct Waveform {
  Eigen::VectorXd samples;
  int sample_rate = 16000;

  Eigen::Index size() const { return samples.size(); }
  void validate() const;
};

enum class WindowKind { PeriodicHann };

struct StftConfig {
  int n_fft = 510;
  int hop = 128;
  WindowKind window = WindowKind::PeriodicHann;

  int bins() const { return n_fft / 2 + 1; }
  int channels() const { return 2 * bins(); }
  /// Frame count produced for a signal of `length` samples (centered framing).
  Eigen::Index frames_for(Eigen::Index length) const { return 1 + length / hop; }

  /// Throws ValidationError unless 0 < hop <= n_fft, n_fft is even and the
  /// squared window overlap-adds to a strictly positive envelope.
  void validate() const;

  static StftConfig paper() { return {510, 128, WindowKind::PeriodicHann}; }
  static StftConfig desk() { return {62, 16, WindowKind::PeriodicHann}; }

  bool operator==(const StftConfig&) const = default;
};

Eigen::VectorXd analysis_window(const StftConfig& cfg);

/// Centered STFT with reflection padding of n_fft/2 on both sides.
Spectrogram stft(const Waveform& w, const StftConfig& cfg);
Spectrogram stft(const Eigen::Ref<const Eigen::VectorXd>& samples, const StftConfig& cfg);

/// Weighted overlap-add inverse of `stft`, trimmed to `out_len` samples.
/// The frame count of `spec` must equal cfg.frames_for(out_len).
Waveform istft(const Spectrogram& spec, const StftConfig& cfg, Eigen::Index out_len, int sample_rate);
Eigen::VectorXd istft_samples(const Spectrogram& spec, const StftConfig& cfg, Eigen::Index out_len);

/// Splits along time into contiguous chunks of `chunk_frames` (last may be shorter).
std::vector<Spectrogram> chunk(const Spectrogram& spec, Eigen::Index chunk_frames);
Spectrogram concat_time(const std::vector<Spectrogram>& chunks);

/// Per-bin magnitude sqrt(re^2 + im^2), shape (F, T).
Eigen::MatrixXd magnitude(const Spectrogram& spec);

void validate_spectrogram(const Spectrogram& spec, const StftConfig& cfg);

}  // namespace aftse

#pragma once

#include <filesystem>

#include "aftse/spectral.hpp"

namespace aftse {

enum class WavEncoding { Pcm16, Float32, Float64 };

/// Reads a single-channel RIFF/WAVE file (16-bit PCM, 32- or 64-bit IEEE float).
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w, WavEncoding enc = WavEncoding::Float32);

// Spectrogram dump layout (all little-endian):
//   bytes 0..3   magic "AFSG"
//   bytes 4..7   u32 format version (1)
//   bytes 8..11  u32 channel count 2F
//   bytes 12..15 u32 frame count T
//   then 2F*T f32 values, frame-major: value(c, t) at index t*2F + c.
void write_spectrogram(const std::filesystem::path& path, const Spectrogram& spec);
Spectrogram read_spectrogram(const std::filesystem::path& path);

}  // namespace aftse

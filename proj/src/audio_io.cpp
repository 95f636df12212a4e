#include "aftse/audio_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace aftse {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw IoError("truncated file: " + path.string());
  }
  return v;
}

std::array<char, 4> tag(std::istream& is, const std::filesystem::path& path) {
  std::array<char, 4> t{};
  if (!is.read(t.data(), 4)) throw IoError("truncated file: " + path.string());
  return t;
}

bool tag_is(const std::array<char, 4>& t, const char* s) { return std::memcmp(t.data(), s, 4) == 0; }

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  if (!tag_is(tag(is, path), "RIFF")) throw IoError(path.string() + ": not a RIFF file");
  get<std::uint32_t>(is, path);
  if (!tag_is(tag(is, path), "WAVE")) throw IoError(path.string() + ": not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    const auto id = tag(is, path);
    const auto size = get<std::uint32_t>(is, path);
    if (tag_is(id, "fmt ")) {
      format = get<std::uint16_t>(is, path);
      channels = get<std::uint16_t>(is, path);
      rate = get<std::uint32_t>(is, path);
      get<std::uint32_t>(is, path);
      get<std::uint16_t>(is, path);
      bits = get<std::uint16_t>(is, path);
      is.seekg(size - 16 + (size & 1), std::ios::cur);
      have_fmt = true;
    } else if (tag_is(id, "data")) {
      if (!have_fmt) throw IoError(path.string() + ": data chunk before fmt chunk");
      if (channels != 1) throw IoError(path.string() + ": only single-channel audio is supported");
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      const bool f64 = format == 3 && bits == 64;
      if (!pcm16 && !f32 && !f64) {
        throw IoError(path.string() + ": unsupported encoding (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits)");
      }
      const std::size_t n = size / (bits / 8);
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        double v = 0.0;
        if (pcm16) {
          v = get<std::int16_t>(is, path) / 32768.0;
        } else if (f32) {
          v = get<float>(is, path);
        } else {
          v = get<double>(is, path);
        }
        w.samples(static_cast<Eigen::Index>(i)) = v;
      }
      return w;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
    }
  }
}

void write_wav(const std::filesystem::path& path, const Waveform& w, WavEncoding enc) {
  w.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  const std::uint16_t bits = enc == WavEncoding::Pcm16 ? 16 : enc == WavEncoding::Float32 ? 32 : 64;
  const std::uint16_t format = enc == WavEncoding::Pcm16 ? 1 : 3;
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * (bits / 8));
  os.write("RIFF", 4);
  put<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put<std::uint32_t>(os, 16);
  put<std::uint16_t>(os, format);
  put<std::uint16_t>(os, 1);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate) * (bits / 8));
  put<std::uint16_t>(os, bits / 8);
  put<std::uint16_t>(os, bits);
  os.write("data", 4);
  put<std::uint32_t>(os, data_bytes);
  for (Eigen::Index i = 0; i < w.samples.size(); ++i) {
    const double v = w.samples(i);
    switch (enc) {
      case WavEncoding::Pcm16:
        put<std::int16_t>(os, static_cast<std::int16_t>(std::lround(std::clamp(v, -1.0, 32767.0 / 32768.0) * 32768.0)));
        break;
      case WavEncoding::Float32:
        put<float>(os, static_cast<float>(v));
        break;
      case WavEncoding::Float64:
        put<double>(os, v);
        break;
    }
  }
  if (!os) throw IoError("write failed: " + path.string());
}

void write_spectrogram(const std::filesystem::path& path, const Spectrogram& spec) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write("AFSG", 4);
  put<std::uint32_t>(os, 1);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(spec.rows()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(spec.cols()));
  const Eigen::MatrixXf f = spec.cast<float>();  // column-major == frame-major
  os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  if (!os) throw IoError("write failed: " + path.string());
}

Spectrogram read_spectrogram(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  if (!tag_is(tag(is, path), "AFSG")) throw IoError(path.string() + ": bad spectrogram magic");
  const auto version = get<std::uint32_t>(is, path);
  if (version != 1) throw IoError(path.string() + ": unsupported spectrogram version " + std::to_string(version));
  const auto rows = get<std::uint32_t>(is, path);
  const auto cols = get<std::uint32_t>(is, path);
  Eigen::MatrixXf f(rows, cols);
  if (!is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)))) {
    throw IoError("truncated spectrogram payload: " + path.string());
  }
  return f.cast<double>();
}

}  // namespace aftse

#include "aftse/spectral.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>

namespace aftse {

namespace {

// Real DFT restricted to the non-negative bins, written as two dense
// matrices so a whole frame matrix transforms with one GEMM each way.
struct DftBasis {
  Eigen::VectorXd window;
  Eigen::MatrixXd fwd_cos;  // (F, N)
  Eigen::MatrixXd fwd_sin;  // (F, N)
  Eigen::MatrixXd inv_cos;  // (N, F), includes the 1/N and one-sided doubling
  Eigen::MatrixXd inv_sin;  // (N, F)
  Eigen::VectorXd ola_norm_period;  // sum of w^2 over one hop period
};

std::unique_ptr<DftBasis> make_basis(const StftConfig& cfg) {
  const int n = cfg.n_fft;
  const int f = cfg.bins();
  auto b = std::make_unique<DftBasis>();
  b->window = analysis_window(cfg);
  b->fwd_cos.resize(f, n);
  b->fwd_sin.resize(f, n);
  b->inv_cos.resize(n, f);
  b->inv_sin.resize(n, f);
  const double two_pi_over_n = 2.0 * std::numbers::pi / n;
  for (int k = 0; k < f; ++k) {
    const double weight = (k == 0 || 2 * k == n) ? 1.0 : 2.0;
    for (int j = 0; j < n; ++j) {
      // Reduce k*j modulo n before scaling so the phase argument stays exact.
      const double phase = two_pi_over_n * static_cast<double>((static_cast<long long>(k) * j) % n);
      const double c = std::cos(phase);
      const double s = std::sin(phase);
      b->fwd_cos(k, j) = c;
      b->fwd_sin(k, j) = s;
      b->inv_cos(j, k) = weight * c / n;
      b->inv_sin(j, k) = weight * s / n;
    }
  }
  return b;
}

const DftBasis& basis_for(const StftConfig& cfg) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::unique_ptr<DftBasis>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[{cfg.n_fft, static_cast<int>(cfg.window)}];
  if (!slot) slot = make_basis(cfg);
  return *slot;
}

Eigen::VectorXd reflect_pad(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Index pad) {
  const Eigen::Index len = x.size();
  Eigen::VectorXd out(len + 2 * pad);
  out.segment(pad, len) = x;
  for (Eigen::Index i = 0; i < pad; ++i) {
    out(pad - 1 - i) = x(i + 1);
    out(pad + len + i) = x(len - 2 - i);
  }
  return out;
}

}  // namespace

void Waveform::validate() const {
  if (sample_rate <= 0) throw ValidationError("waveform sample_rate must be positive");
  if (!samples.allFinite()) throw ValidationError("waveform contains non-finite samples");
}

void StftConfig::validate() const {
  if (n_fft <= 2 || n_fft % 2 != 0) {
    throw ValidationError("stft n_fft must be an even integer > 2, got " + std::to_string(n_fft));
  }
  if (hop <= 0 || hop > n_fft) {
    throw ValidationError("stft hop must satisfy 0 < hop <= n_fft, got " + std::to_string(hop));
  }
  const Eigen::VectorXd w = analysis_window(*this);
  Eigen::VectorXd env = Eigen::VectorXd::Zero(hop);
  for (int i = 0; i < n_fft; ++i) env(i % hop) += w(i) * w(i);
  if (env.minCoeff() < 1e-8) {
    throw ValidationError("stft window/hop combination violates the overlap-add condition");
  }
}

Eigen::VectorXd analysis_window(const StftConfig& cfg) {
  Eigen::VectorXd w(cfg.n_fft);
  for (int i = 0; i < cfg.n_fft; ++i) {
    w(i) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / cfg.n_fft);
  }
  return w;
}

Spectrogram stft(const Waveform& w, const StftConfig& cfg) {
  w.validate();
  return stft(w.samples, cfg);
}

Spectrogram stft(const Eigen::Ref<const Eigen::VectorXd>& samples, const StftConfig& cfg) {
  cfg.validate();
  if (samples.size() < cfg.n_fft) {
    throw LengthError("signal of " + std::to_string(samples.size()) +
                      " samples is shorter than one frame (n_fft=" + std::to_string(cfg.n_fft) + ")");
  }
  if (!samples.allFinite()) throw ValidationError("stft input contains non-finite samples");

  const DftBasis& b = basis_for(cfg);
  const Eigen::Index pad = cfg.n_fft / 2;
  const Eigen::VectorXd padded = reflect_pad(samples, pad);
  const Eigen::Index frames = cfg.frames_for(samples.size());

  Eigen::MatrixXd framed(cfg.n_fft, frames);
  for (Eigen::Index t = 0; t < frames; ++t) {
    framed.col(t) = padded.segment(t * cfg.hop, cfg.n_fft).cwiseProduct(b.window);
  }
  const int f = cfg.bins();
  Spectrogram spec(2 * f, frames);
  spec.topRows(f).noalias() = b.fwd_cos * framed;
  spec.bottomRows(f).noalias() = -(b.fwd_sin * framed);
  return spec;
}

Eigen::VectorXd istft_samples(const Spectrogram& spec, const StftConfig& cfg, Eigen::Index out_len) {
  cfg.validate();
  validate_spectrogram(spec, cfg);
  if (out_len < cfg.n_fft) throw LengthError("istft out_len shorter than one frame");
  if (spec.cols() != cfg.frames_for(out_len)) {
    throw ValidationError("istft frame count " + std::to_string(spec.cols()) + " inconsistent with out_len " +
                          std::to_string(out_len) + " (expected " + std::to_string(cfg.frames_for(out_len)) +
                          ")");
  }
  const DftBasis& b = basis_for(cfg);
  const int f = cfg.bins();
  Eigen::MatrixXd frames = b.inv_cos * spec.topRows(f);
  frames.noalias() -= b.inv_sin * spec.bottomRows(f);

  const Eigen::Index pad = cfg.n_fft / 2;
  const Eigen::Index total = out_len + 2 * pad;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(total);
  Eigen::VectorXd norm = Eigen::VectorXd::Zero(total);
  const Eigen::VectorXd w2 = b.window.cwiseProduct(b.window);
  for (Eigen::Index t = 0; t < spec.cols(); ++t) {
    const Eigen::Index start = t * cfg.hop;
    const Eigen::Index n = std::min<Eigen::Index>(cfg.n_fft, total - start);
    if (n <= 0) break;
    acc.segment(start, n) += frames.col(t).head(n).cwiseProduct(b.window.head(n));
    norm.segment(start, n) += w2.head(n);
  }
  Eigen::VectorXd out = acc.segment(pad, out_len);
  const Eigen::VectorXd den = norm.segment(pad, out_len);
  for (Eigen::Index i = 0; i < out_len; ++i) {
    out(i) = den(i) > 1e-12 ? out(i) / den(i) : 0.0;
  }
  return out;
}

Waveform istft(const Spectrogram& spec, const StftConfig& cfg, Eigen::Index out_len, int sample_rate) {
  return Waveform{istft_samples(spec, cfg, out_len), sample_rate};
}

std::vector<Spectrogram> chunk(const Spectrogram& spec, Eigen::Index chunk_frames) {
  if (chunk_frames <= 0) throw ValidationError("chunk_frames must be positive");
  std::vector<Spectrogram> out;
  for (Eigen::Index start = 0; start < spec.cols(); start += chunk_frames) {
    const Eigen::Index n = std::min(chunk_frames, spec.cols() - start);
    out.emplace_back(spec.middleCols(start, n));
  }
  return out;
}

Spectrogram concat_time(const std::vector<Spectrogram>& chunks) {
  if (chunks.empty()) return {};
  const Eigen::Index rows = chunks.front().rows();
  Eigen::Index cols = 0;
  for (const auto& c : chunks) {
    if (c.rows() != rows) {
      throw ValidationError("concat_time channel mismatch: " + std::to_string(c.rows()) + " vs " +
                            std::to_string(rows));
    }
    cols += c.cols();
  }
  Spectrogram out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& c : chunks) {
    out.middleCols(at, c.cols()) = c;
    at += c.cols();
  }
  return out;
}

Eigen::MatrixXd magnitude(const Spectrogram& spec) {
  const Eigen::Index f = spec.rows() / 2;
  return (spec.topRows(f).array().square() + spec.bottomRows(f).array().square()).sqrt().matrix();
}

void validate_spectrogram(const Spectrogram& spec, const StftConfig& cfg) {
  if (spec.rows() != cfg.channels()) {
    throw ValidationError("spectrogram has " + std::to_string(spec.rows()) + " channels, config expects " +
                          std::to_string(cfg.channels()));
  }
  if (!spec.allFinite()) throw ValidationError("spectrogram contains non-finite values");
}

}  // namespace aftse

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>

#include "aftse/autodiff.hpp"
#include "aftse/params.hpp"
#include "aftse/spectral.hpp"

namespace aftse {

/// Shape of the reference transformer backbone.
struct PredictorConfig {
  int channels = 512;  ///< 2F of the active STFT configuration
  int n_blocks = 4;
  int n_heads = 4;
  int width = 128;
  int mlp_hidden = 256;
  int time_embed_dim = 64;
  int max_prefix_frames = 256;

  void validate() const;
};

/// Mean-velocity network u(z, t, r; E). The enrollment spectrum E is a
/// temporal prefix; the output has exactly the shape of z.
///
/// Every evaluation (differentiable or not) goes through `apply`, which
/// validates inputs and increments the evaluation counter used for NFE
/// accounting.
class VelocityModel {
 public:
  virtual ~VelocityModel() = default;

  ad::Var apply(ad::Tape& tape, const BoundParams& params, const Spectrogram& z, const Spectrogram& enroll, double t,
                double r) const;

  virtual ParamStore init_params(std::uint64_t seed) const = 0;
  virtual int channels() const = 0;

  std::size_t evaluations() const { return evaluations_.load(); }
  void reset_evaluations() const { evaluations_.store(0); }

 protected:
  virtual ad::Var forward(ad::Tape& tape, const BoundParams& params, const Spectrogram& z,
                          const Spectrogram& enroll, double t, double r) const = 0;

 private:
  mutable std::atomic<std::size_t> evaluations_{0};
};

/// Scaled-down U-shaped diffusion transformer: per-frame tokens (real,
/// imaginary and log-magnitude channels plus the enrollment's average
/// log-magnitude spectrum), enrollment prefix, adaptive layer norm driven by emb(t) + emb(r - t), long skips
/// from the first half of the blocks into the second half, and a
/// zero-initialised output head (untrained model outputs exactly zero).
///
/// The head is u = W h + [g; g] * z with g = G h: a linear velocity plus a
/// per-bin real gain applied jointly to the real and imaginary parts of z.
class UDiTBackbone final : public VelocityModel {
 public:
  explicit UDiTBackbone(PredictorConfig cfg);

  ParamStore init_params(std::uint64_t seed) const override;
  int channels() const override { return cfg_.channels; }
  const PredictorConfig& config() const { return cfg_; }

  /// Sinusoidal embedding of a scalar time in [0, 1].
  static Eigen::VectorXd time_embedding(double t, int dim);

 protected:
  ad::Var forward(ad::Tape& tape, const BoundParams& params, const Spectrogram& z, const Spectrogram& enroll,
                  double t, double r) const override;

 private:
  struct BlockSlots {
    std::size_t ada_w, ada_b, qkv_w, qkv_b, o_w, o_b, fc1_w, fc1_b, fc2_w, fc2_b;
    std::size_t skip_w = 0, skip_b = 0;
    bool has_skip = false;
  };

  ad::Var block(const BlockSlots& s, const BoundParams& p, const ad::Var& x, const ad::Var& cond) const;
  static Eigen::MatrixXd log_magnitude(const Spectrogram& z);
  Eigen::MatrixXd token_features(const Spectrogram& z, const Eigen::VectorXd& profile) const;

  PredictorConfig cfg_;
  ParamStore layout_;  // names and shapes only
  std::size_t in_w_, in_b_, seg_enroll_, seg_mix_, t1_w_, t1_b_, t2_w_, t2_b_;
  std::vector<BlockSlots> blocks_;
  std::size_t final_ada_w_, final_ada_b_, out_w_, out_b_, gate_w_, gate_b_;
};

/// Evaluates u(z, t, r; E) without recording gradients.
Spectrogram mean_velocity(const VelocityModel& model, const ParamStore& params, const Spectrogram& z,
                          const Spectrogram& enroll, double t, double r);

/// Teacher evaluation sg(u(z, t, r; E)): identical value to mean_velocity,
/// returned as plain data so it contributes nothing to any gradient.
Spectrogram stop_gradient_eval(const VelocityModel& model, const ParamStore& params, const Spectrogram& z,
                               const Spectrogram& enroll, double t, double r);

struct GradientResult {
  double loss = 0.0;
  ParamStore grad;
};

/// Scalar loss built on a tape from differentiable parameters.
using LossFn = std::function<ad::Var(ad::Tape&, const BoundParams&)>;

/// Exact reverse-mode gradient of `loss_fn` with respect to `params`.
/// Throws NonFiniteLoss if the loss is NaN/Inf.
GradientResult gradient(const ParamStore& params, const LossFn& loss_fn);

// ---------------------------------------------------------------------------
// Mixing-ratio regressor p_phi(y, e).

struct MrConfig {
  int n_fft = 62;
  int hop = 16;
  int conv_channels = 32;
  int kernel = 3;
  int stride = 2;
  int hidden = 64;
  double mask_prob = 0.0;   ///< probability of applying time/frequency masking in training
  int max_mask_frames = 4;
  int max_mask_bins = 4;
  int max_shift_bins = 0;  ///< training-time random shift applied jointly to mixture and enrollment bins

  StftConfig stft() const { return {n_fft, hop, WindowKind::PeriodicHann}; }
  void validate() const;
};

class MrRegressor {
 public:
  explicit MrRegressor(MrConfig cfg);

  ParamStore init_params(std::uint64_t seed) const;
  const MrConfig& config() const { return cfg_; }

  /// Log-magnitude features (F x T) of a waveform.
  Eigen::MatrixXd features(const Waveform& w) const;

  /// Real-valued head output (pre-sigmoid), 1x1.
  ad::Var logit(ad::Tape& tape, const BoundParams& params, const Eigen::MatrixXd& mix_feats,
                const Eigen::MatrixXd& enroll_feats) const;

  /// Log of the enrollment-weighted share of mixture power, spectral cosine
  /// similarity and log power ratio, computed from time-averaged power spectra.
  static Eigen::VectorXd match_statistics(const Eigen::MatrixXd& mix_feats, const Eigen::MatrixXd& enroll_feats);
  static constexpr int kMatchStats = 3;

  std::size_t evaluations() const { return evaluations_.load(); }
  void reset_evaluations() const { evaluations_.store(0); }

 private:
  ad::Var encode(const BoundParams& p, ad::Tape& tape, const Eigen::MatrixXd& feats) const;
  Eigen::Index min_frames() const;

  MrConfig cfg_;
  // Slot order matches init_params().
  static constexpr std::size_t c1_w_ = 0, c1_b_ = 1, c2_w_ = 2, c2_b_ = 3, h1_w_ = 4, h1_b_ = 5, h2_w_ = 6, h2_b_ = 7;
  mutable std::atomic<std::size_t> evaluations_{0};
};

/// tau_hat = sigmoid(p_phi(y, e)), strictly inside (0, 1).
double mr_predict(const MrRegressor& model, const ParamStore& params, const Waveform& y, const Waveform& e);

double logistic(double x);

}  // namespace aftse

#pragma once

#include <random>

#include "aftse/predictor.hpp"
#include "aftse/spectral.hpp"

namespace aftse::testing {

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline Eigen::VectorXd random_signal(Eigen::Index n, std::uint64_t seed, double scale = 0.1) {
  return random_matrix(n, 1, seed, scale);
}

/// A backbone small enough for finite-difference checks (a few thousand parameters).
inline PredictorConfig tiny_predictor(int channels = 8) {
  PredictorConfig c;
  c.channels = channels;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.width = 8;
  c.mlp_hidden = 16;
  c.time_embed_dim = 8;
  c.max_prefix_frames = 16;
  return c;
}

/// Initial parameters with every tensor (including the zero-initialised
/// head and modulation layers) perturbed so all gradient paths are live.
inline ParamStore live_params(const VelocityModel& model, std::uint64_t seed, double scale = 0.2) {
  ParamStore p = model.init_params(seed);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] += random_matrix(p[i].rows(), p[i].cols(), seed * 7919 + i, scale);
  }
  return p;
}

/// Velocity model returning a fixed field regardless of its inputs,
/// optionally looked up per chunk by matching the queried state against
/// the columns of a reference spectrogram.
class FixedVelocity final : public VelocityModel {
 public:
  FixedVelocity(Spectrogram field, Spectrogram reference = {})
      : field_(std::move(field)), reference_(std::move(reference)) {}

  ParamStore init_params(std::uint64_t) const override { return {}; }
  int channels() const override { return static_cast<int>(field_.rows()); }

 protected:
  ad::Var forward(ad::Tape& tape, const BoundParams&, const Spectrogram& z, const Spectrogram&, double,
                  double) const override {
    if (reference_.size() == 0 || z.cols() == field_.cols()) return tape.constant(field_.leftCols(z.cols()));
    for (Eigen::Index off = 0; off + z.cols() <= reference_.cols(); ++off) {
      if (reference_.middleCols(off, z.cols()) == z) return tape.constant(field_.middleCols(off, z.cols()));
    }
    throw std::runtime_error("FixedVelocity: query not found in reference");
  }

 private:
  Spectrogram field_;
  Spectrogram reference_;
};

}  // namespace aftse::testing

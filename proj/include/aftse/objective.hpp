#pragma once

// Training losses: the diagonal flow-matching anchor with adaptive weighting
// and the JVP-free AlphaFlow interval-consistency term with a bounded
// 1/alpha-style weighting. Every weight is computed from values and enters
// the graph as a constant (stop-gradient); nothing here differentiates the
// network output with respect to time.

#include <cmath>

#include "aftse/autodiff.hpp"
#include "aftse/params.hpp"
#include "aftse/predictor.hpp"
#include "aftse/schedules.hpp"
#include "aftse/trajectory.hpp"

namespace aftse {

struct ObjectiveConfig {
  double gamma = 0.5;
  double eps_adp = 1e-3;
  double kappa = 1.0;
  double eps_bnd = 1e-6;
  double lambda_fm = 0.6;
  double lambda_mf = 0.4;
  double rho = 0.5;

  void validate() const;
};

/// Spectra of one training example. `background` is only used by the
/// background-to-target path.
struct SpectralExample {
  Spectrogram mixture;
  Spectrogram target;
  Spectrogram background;
  Spectrogram enrollment;
  double tau_star = 0.5;
};

inline PathEndpoints<double> endpoints(const SpectralExample& ex, PathKind kind) {
  return {kind == PathKind::MixtureToTarget ? ex.mixture : ex.background, ex.target};
}

// --- Value-level pieces -----------------------------------------------------

/// m(D) = ||D||_F^2 / (rows * cols).
template <typename Derived>
double per_sample_mse(const Eigen::MatrixBase<Derived>& d) {
  return d.squaredNorm() / static_cast<double>(d.size());
}

/// (m + eps_adp)^(gamma - 1); exactly 1 when gamma == 1.
inline double adaptive_weight(double m, const ObjectiveConfig& cfg) {
  return cfg.gamma == 1.0 ? 1.0 : std::pow(m + cfg.eps_adp, cfg.gamma - 1.0);
}

/// kappa / (m + alpha * kappa + eps_bnd).
inline double bounded_weight(double m, double alpha, const ObjectiveConfig& cfg) {
  return cfg.kappa / (m + alpha * cfg.kappa + cfg.eps_bnd);
}

template <typename Derived>
double adaptive_weight_loss(const Eigen::MatrixBase<Derived>& d, const ObjectiveConfig& cfg) {
  const double m = per_sample_mse(d);
  return adaptive_weight(m, cfg) * m;
}

template <typename Derived>
double bounded_loss(const Eigen::MatrixBase<Derived>& d, double alpha, const ObjectiveConfig& cfg) {
  const double m = per_sample_mse(d);
  return bounded_weight(m, alpha, cfg) * m;
}

/// u*_alpha = alpha * v + (1 - alpha) * teacher; returns v unchanged at alpha = 1.
template <typename DerivedV, typename DerivedU>
SpectrogramT<typename DerivedV::Scalar> alpha_target(const Eigen::MatrixBase<DerivedV>& v,
                                                     const Eigen::MatrixBase<DerivedU>& teacher, double alpha) {
  detail::require_same_shape(v, teacher, "alpha_target");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("alpha_target: alpha must lie in (0, 1]");
  if (alpha == 1.0) return v;
  return alpha * v + (1.0 - alpha) * teacher;
}

// --- Graph-level losses -----------------------------------------------------

struct LossBreakdown {
  Branch branch = Branch::FlowMatching;
  double raw_mse = 0.0;   ///< m(D)
  double weight = 1.0;    ///< detached weight factor
  double weighted = 0.0;  ///< weight * m(D)
  double total = 0.0;     ///< lambda_branch * weighted
  double alpha = 1.0;
  double t = 0.0;
  double r = 0.0;
};

struct LossTerm {
  LossBreakdown info;
  ad::Var residual;  ///< D on the tape
  ad::Var total;     ///< lambda_branch * weight * m(D), differentiable
};

/// weight * m(D) with the weight held constant.
ad::Var adaptive_weight_loss(const ad::Var& residual, const ObjectiveConfig& cfg, double* weight_out = nullptr);
ad::Var bounded_loss(const ad::Var& residual, double alpha, const ObjectiveConfig& cfg,
                     double* weight_out = nullptr);

/// Diagonal-slice anchor: D = u(z_t, t, t; E) - v, loss = ell_adp(D).
LossTerm fm_branch_loss(const VelocityModel& model, ad::Tape& tape, const BoundParams& params,
                        const SpectralExample& ex, PathKind kind, double t, const ObjectiveConfig& cfg);

/// Interval consistency: student u(z_t, t, r; E), teacher sg(u(z_s, s, r; E))
/// on the closed-form state z_s, target alpha*v + (1-alpha)*teacher,
/// loss = ell_bnd(D; alpha). `teacher_params` are normally the live parameters.
LossTerm mf_branch_loss(const VelocityModel& model, ad::Tape& tape, const BoundParams& params,
                        const ParamStore& teacher_params, const SpectralExample& ex, PathKind kind,
                        const Interval& iv, double alpha, const ObjectiveConfig& cfg);

/// Evaluates exactly the branch selected in `sample`.
LossTerm total_loss(const VelocityModel& model, ad::Tape& tape, const BoundParams& params,
                    const ParamStore& teacher_params, const SpectralExample& ex, PathKind kind,
                    const IntervalSample& sample, const ObjectiveConfig& cfg);

}  // namespace aftse

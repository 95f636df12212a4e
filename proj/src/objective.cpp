#include "aftse/objective.hpp"

#include <string>

namespace aftse {

void ObjectiveConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("objective: gamma must lie in [0, 1]");
  if (!(eps_adp > 0.0)) throw ValidationError("objective: eps_adp must be positive");
  if (!(kappa > 0.0)) throw ValidationError("objective: kappa must be positive");
  if (!(eps_bnd > 0.0)) throw ValidationError("objective: eps_bnd must be positive");
  if (!(lambda_fm > 0.0) || !(lambda_mf > 0.0)) throw ValidationError("objective: lambda weights must be positive");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ValidationError("objective: rho must lie in [0, 1]");
}

ad::Var adaptive_weight_loss(const ad::Var& residual, const ObjectiveConfig& cfg, double* weight_out) {
  const ad::Var m = ad::mean_square(residual);
  const double w = adaptive_weight(m.scalar(), cfg);
  if (weight_out) *weight_out = w;
  return ad::scale(m, w);
}

ad::Var bounded_loss(const ad::Var& residual, double alpha, const ObjectiveConfig& cfg, double* weight_out) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("bounded_loss: alpha must lie in (0, 1]");
  const ad::Var m = ad::mean_square(residual);
  const double w = bounded_weight(m.scalar(), alpha, cfg);
  if (weight_out) *weight_out = w;
  return ad::scale(m, w);
}

namespace {

void check_finite(const LossBreakdown& b) {
  if (!std::isfinite(b.raw_mse)) throw NonFiniteLoss(std::string(to_string(b.branch)) + ".raw_mse", b.raw_mse);
  if (!std::isfinite(b.weighted)) throw NonFiniteLoss(std::string(to_string(b.branch)) + ".weighted", b.weighted);
}

}  // namespace

LossTerm fm_branch_loss(const VelocityModel& model, ad::Tape& tape, const BoundParams& params,
                        const SpectralExample& ex, PathKind kind, double t, const ObjectiveConfig& cfg) {
  if (!(t > 0.0 && t < 1.0)) throw ValidationError("fm_branch_loss: t must lie in (0, 1)");
  const auto path = endpoints(ex, kind);
  const Spectrogram zt = state_at(path, t);
  const Spectrogram v = true_velocity(path);

  LossTerm out;
  const ad::Var u = model.apply(tape, params, zt, ex.enrollment, t, t);
  out.residual = ad::add_const(u, -v);
  const ad::Var weighted = adaptive_weight_loss(out.residual, cfg, &out.info.weight);
  out.total = ad::scale(weighted, cfg.lambda_fm);
  out.info.branch = Branch::FlowMatching;
  out.info.raw_mse = per_sample_mse(out.residual.value());
  out.info.weighted = weighted.scalar();
  out.info.total = out.total.scalar();
  out.info.t = t;
  out.info.r = t;
  check_finite(out.info);
  return out;
}

LossTerm mf_branch_loss(const VelocityModel& model, ad::Tape& tape, const BoundParams& params,
                        const ParamStore& teacher_params, const SpectralExample& ex, PathKind kind,
                        const Interval& iv, double alpha, const ObjectiveConfig& cfg) {
  iv.validate();
  if (!(iv.t < iv.r)) throw ValidationError("mf_branch_loss: requires t < r");
  const auto path = endpoints(ex, kind);
  const Spectrogram zt = state_at(path, iv.t);
  const double s = intermediate_time(iv, alpha);
  const Spectrogram zs = state_at(path, s);
  const Spectrogram v = true_velocity(path);

  LossTerm out;
  const ad::Var student = model.apply(tape, params, zt, ex.enrollment, iv.t, iv.r);
  const Spectrogram teacher = stop_gradient_eval(model, teacher_params, zs, ex.enrollment, s, iv.r);
  const Spectrogram target = alpha_target(v, teacher, alpha);
  out.residual = ad::add_const(student, -target);
  const ad::Var weighted = bounded_loss(out.residual, alpha, cfg, &out.info.weight);
  out.total = ad::scale(weighted, cfg.lambda_mf);
  out.info.branch = Branch::MeanFlow;
  out.info.raw_mse = per_sample_mse(out.residual.value());
  out.info.weighted = weighted.scalar();
  out.info.total = out.total.scalar();
  out.info.alpha = alpha;
  out.info.t = iv.t;
  out.info.r = iv.r;
  check_finite(out.info);
  return out;
}

LossTerm total_loss(const VelocityModel& model, ad::Tape& tape, const BoundParams& params,
                    const ParamStore& teacher_params, const SpectralExample& ex, PathKind kind,
                    const IntervalSample& sample, const ObjectiveConfig& cfg) {
  if (sample.branch == Branch::FlowMatching) {
    if (sample.t != sample.r) throw ValidationError("total_loss: flow-matching sample must have t == r");
    return fm_branch_loss(model, tape, params, ex, kind, sample.t, cfg);
  }
  return mf_branch_loss(model, tape, params, teacher_params, ex, kind, sample.interval(), sample.alpha, cfg);
}

}  // namespace aftse

#include "aftse/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "aftse/predictor.hpp"

namespace aftse {

void AlphaSchedule::validate() const {
  if (!(start_epoch < end_epoch)) throw ValidationError("alpha schedule: start_epoch must be < end_epoch");
  if (!(alpha_min > 0.0 && alpha_min < 1.0)) throw ValidationError("alpha schedule: alpha_min must lie in (0, 1)");
  if (!(steepness > 0.0)) throw ValidationError("alpha schedule: steepness must be positive");
}

double alpha_at(const AlphaSchedule& schedule, double epoch) {
  const double p = std::clamp((epoch - schedule.start_epoch) / (schedule.end_epoch - schedule.start_epoch), 0.0, 1.0);
  return schedule.alpha_min + (1.0 - schedule.alpha_min) * logistic(-schedule.steepness * (p - 0.5));
}

void TimeSamplerConfig::validate() const {
  if (!(sigma > 0.0)) throw ValidationError("time sampler: sigma must be positive");
  if (!(large_span_prob >= 0.0 && large_span_prob <= 1.0)) {
    throw ValidationError("time sampler: large_span_prob must lie in [0, 1]");
  }
  if (!(t_max_large > 0.0 && t_max_large < r_min_large && r_min_large < 1.0)) {
    throw ValidationError("time sampler: need 0 < t_max_large < r_min_large < 1");
  }
}

double sample_logit_normal(const TimeSamplerConfig& cfg, Rng& rng) {
  std::normal_distribution<double> normal(cfg.mu, cfg.sigma);
  while (true) {
    const double x = normal(rng);
    const double t = 1.0 / (1.0 + std::exp(-x));
    if (t > 0.0 && t < 1.0) return t;
  }
}

Interval sample_interval(const TimeSamplerConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < cfg.large_span_prob) {
    const double t = cfg.t_max_large * (1.0 - unit(rng));
    const double r = cfg.r_min_large + (1.0 - cfg.r_min_large) * unit(rng);
    return {t, r};
  }
  while (true) {
    const double a = sample_logit_normal(cfg, rng);
    const double b = sample_logit_normal(cfg, rng);
    if (a != b) return {std::min(a, b), std::max(a, b)};
  }
}

Branch sample_branch(double rho, Rng& rng) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ValidationError("branch probability rho must lie in [0, 1]");
  std::bernoulli_distribution coin(rho);
  return coin(rng) ? Branch::FlowMatching : Branch::MeanFlow;
}

IntervalSample sample_supervision(const TimeSamplerConfig& cfg, double rho, double alpha, Rng& rng) {
  IntervalSample out;
  out.branch = sample_branch(rho, rng);
  if (out.branch == Branch::FlowMatching) {
    out.t = sample_logit_normal(cfg, rng);
    out.r = out.t;
    out.alpha = 1.0;
    out.s = out.t;
  } else {
    const Interval iv = sample_interval(cfg, rng);
    out.t = iv.t;
    out.r = iv.r;
    out.alpha = alpha;
    out.s = intermediate_time(iv, alpha);
  }
  return out;
}

}  // namespace aftse

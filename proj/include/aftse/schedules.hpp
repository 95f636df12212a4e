#pragma once

#include <random>

#include "aftse/trajectory.hpp"

namespace aftse {

using Rng = std::mt19937_64;

/// Sigmoid annealing of the AlphaFlow ratio from 1 down to alpha_min:
///   p = clamp((epoch - start_epoch) / (end_epoch - start_epoch), 0, 1)
///   alpha = alpha_min + (1 - alpha_min) * logistic(-steepness * (p - 1/2))
struct AlphaSchedule {
  double start_epoch = 5.0;
  double end_epoch = 100.0;
  double steepness = 15.0;
  double alpha_min = 0.1;

  void validate() const;
};

double alpha_at(const AlphaSchedule& schedule, double epoch);

struct TimeSamplerConfig {
  double mu = -0.4;
  double sigma = 1.0;
  double large_span_prob = 0.15;
  double t_max_large = 0.15;
  double r_min_large = 0.85;

  void validate() const;
};

enum class Branch { FlowMatching, MeanFlow };

inline const char* to_string(Branch b) { return b == Branch::FlowMatching ? "fm" : "mf"; }

/// One supervision draw: the branch, its interval and (for MeanFlow) the
/// AlphaFlow ratio and intermediate time.
struct IntervalSample {
  Branch branch = Branch::FlowMatching;
  double t = 0.5;
  double r = 0.5;
  double alpha = 1.0;
  double s = 0.5;

  Interval interval() const { return {t, r}; }
};

/// sigmoid(mu + sigma * N(0, 1)), redrawn until strictly inside (0, 1).
double sample_logit_normal(const TimeSamplerConfig& cfg, Rng& rng);

/// MeanFlow interval. With probability large_span_prob: t ~ U(0, t_max_large],
/// r ~ U[r_min_large, 1). Otherwise t/r are the min/max of two independent
/// logit-normal draws (ties redrawn). Always 0 < t < r < 1.
Interval sample_interval(const TimeSamplerConfig& cfg, Rng& rng);

/// Bernoulli(rho) with success = FlowMatching.
Branch sample_branch(double rho, Rng& rng);

/// Full per-example draw: branch, then either a diagonal FM time (r = t)
/// or a MeanFlow interval with the given alpha.
IntervalSample sample_supervision(const TimeSamplerConfig& cfg, double rho, double alpha, Rng& rng);

}  // namespace aftse

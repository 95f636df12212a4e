#pragma once

// Closed-form algebra of the straight-line transport paths
//   mixture-to-target:   z_t = (1 - t) Y + t S
//   background-to-target: x_t = (1 - t) B + t S
// Both share the same formulas; PathKind only selects the start endpoint.

#include <Eigen/Core>

#include <string>

#include "aftse/errors.hpp"
#include "aftse/spectral.hpp"

namespace aftse {

enum class PathKind { MixtureToTarget, BackgroundToTarget };

inline const char* to_string(PathKind k) {
  return k == PathKind::MixtureToTarget ? "mixture_to_target" : "background_to_target";
}

struct Interval {
  double t = 0.0;
  double r = 1.0;

  double delta() const { return r - t; }
  void validate() const {
    if (!(t >= 0.0 && t <= r && r <= 1.0)) {
      throw ValidationError("interval must satisfy 0 <= t <= r <= 1, got t=" + std::to_string(t) +
                            " r=" + std::to_string(r));
    }
  }
};

/// Start and end spectra of a path, e.g. (Y, S) or (B, S).
template <typename Scalar>
struct PathEndpoints {
  const SpectrogramT<Scalar>& start;
  const SpectrogramT<Scalar>& end;
};

namespace detail {
template <typename A, typename B>
void require_same_shape(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
  }
}
}  // namespace detail

/// (1 - t) * start + t * end. Returns `start` at t=0 and `end` at t=1 exactly.
template <typename DerivedA, typename DerivedB>
SpectrogramT<typename DerivedA::Scalar> state_at(const Eigen::MatrixBase<DerivedA>& start,
                                                 const Eigen::MatrixBase<DerivedB>& end,
                                                 typename DerivedA::Scalar t) {
  using Scalar = typename DerivedA::Scalar;
  detail::require_same_shape(start, end, "state_at");
  if (!(t >= Scalar(0) && t <= Scalar(1))) throw ValidationError("state_at: t outside [0, 1]");
  return (Scalar(1) - t) * start + t * end;
}

template <typename Scalar>
SpectrogramT<Scalar> state_at(const PathEndpoints<Scalar>& path, Scalar t) {
  return state_at(path.start, path.end, t);
}

/// Constant velocity of the straight path: end - start (v = S - Y, or v_bg = S - B).
template <typename DerivedA, typename DerivedB>
SpectrogramT<typename DerivedA::Scalar> true_velocity(const Eigen::MatrixBase<DerivedA>& start,
                                                      const Eigen::MatrixBase<DerivedB>& end) {
  detail::require_same_shape(start, end, "true_velocity");
  return end - start;
}

template <typename Scalar>
SpectrogramT<Scalar> true_velocity(const PathEndpoints<Scalar>& path) {
  return true_velocity(path.start, path.end);
}

/// s = alpha * r + (1 - alpha) * t, evaluated as t + alpha (r - t) so that a
/// degenerate interval returns t exactly; alpha = 1 returns r exactly.
inline double intermediate_time(const Interval& iv, double alpha) {
  iv.validate();
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ValidationError("alpha must lie in (0, 1], got " + std::to_string(alpha));
  }
  if (alpha == 1.0) return iv.r;
  const double s = iv.t + alpha * (iv.r - iv.t);
  return s < iv.t ? iv.t : (s > iv.r ? iv.r : s);
}

/// On-path state at the intermediate time; the teacher's input.
template <typename Scalar>
SpectrogramT<Scalar> intermediate_state(const PathEndpoints<Scalar>& path, const Interval& iv, double alpha) {
  return state_at(path, static_cast<Scalar>(intermediate_time(iv, alpha)));
}

}  // namespace aftse

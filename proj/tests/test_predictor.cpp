#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "aftse/objective.hpp"
#include "aftse/predictor.hpp"
#include "test_support.hpp"

using namespace aftse;
using aftse::testing::live_params;
using aftse::testing::random_matrix;
using aftse::testing::tiny_predictor;

TEST_CASE("output has the shape of the state for any enrollment length") {
  const UDiTBackbone model(tiny_predictor());
  const ParamStore p = live_params(model, 1);
  for (Eigen::Index te : {0, 1, 5, 16}) {
    for (Eigen::Index tz : {1, 7}) {
      const Spectrogram u = mean_velocity(model, p, random_matrix(8, tz, 2), random_matrix(8, te, 3), 0.1, 0.9);
      CHECK(u.rows() == 8);
      CHECK(u.cols() == tz);
      CHECK(u.allFinite());
    }
  }
}

TEST_CASE("freshly initialised model outputs exactly zero") {
  const UDiTBackbone model(tiny_predictor());
  const ParamStore p = model.init_params(4);
  CHECK(mean_velocity(model, p, random_matrix(8, 6, 5), random_matrix(8, 4, 6), 0.0, 1.0).isZero(0.0));
  CHECK(p.total_count() < 50000);
}

TEST_CASE("inputs are validated") {
  const UDiTBackbone model(tiny_predictor());
  const ParamStore p = model.init_params(0);
  const Spectrogram z = random_matrix(8, 4, 7), e = random_matrix(8, 4, 8);
  CHECK_THROWS_AS(mean_velocity(model, p, random_matrix(6, 4, 9), e, 0.0, 1.0), ValidationError);
  CHECK_THROWS_AS(mean_velocity(model, p, z, random_matrix(6, 4, 9), 0.0, 1.0), ValidationError);
  CHECK_THROWS_AS(mean_velocity(model, p, z, e, 0.6, 0.4), ValidationError);
  CHECK_THROWS_AS(mean_velocity(model, p, z, e, -0.1, 0.4), ValidationError);
  CHECK_THROWS_AS(mean_velocity(model, p, z, e, 0.1, 1.1), ValidationError);
  Spectrogram bad = z;
  bad(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(mean_velocity(model, p, bad, e, 0.0, 1.0), ValidationError);
  PredictorConfig cfg = tiny_predictor();
  cfg.n_heads = 3;
  CHECK_THROWS_AS(UDiTBackbone{cfg}, ValidationError);
}

TEST_CASE("evaluation is deterministic and counted") {
  const UDiTBackbone model(tiny_predictor());
  const ParamStore p = live_params(model, 10);
  const Spectrogram z = random_matrix(8, 5, 11), e = random_matrix(8, 3, 12);
  model.reset_evaluations();
  const Spectrogram a = mean_velocity(model, p, z, e, 0.2, 0.7);
  const Spectrogram b = mean_velocity(model, p, z, e, 0.2, 0.7);
  CHECK(a == b);
  CHECK(model.evaluations() == 2);
  // Output depends on both times and on the enrollment.
  CHECK(a != mean_velocity(model, p, z, e, 0.2, 0.8));
  CHECK(a != mean_velocity(model, p, z, e, 0.3, 0.7));
  CHECK(a != mean_velocity(model, p, z, random_matrix(8, 3, 13), 0.2, 0.7));
}

TEST_CASE("enrollment longer than the prefix cap keeps its last frames") {
  PredictorConfig cfg = tiny_predictor();
  cfg.max_prefix_frames = 4;
  const UDiTBackbone model(cfg);
  const ParamStore p = live_params(model, 14);
  const Spectrogram z = random_matrix(8, 5, 15), e = random_matrix(8, 9, 16);
  CHECK(mean_velocity(model, p, z, e, 0.0, 1.0) == mean_velocity(model, p, z, e.rightCols(4), 0.0, 1.0));
}

TEST_CASE("stop-gradient teacher equals a plain forward pass") {
  const UDiTBackbone model(tiny_predictor());
  const ParamStore p = live_params(model, 17);
  const Spectrogram z = random_matrix(8, 5, 18), e = random_matrix(8, 3, 19);
  CHECK(stop_gradient_eval(model, p, z, e, 0.3, 0.9) == mean_velocity(model, p, z, e, 0.3, 0.9));
  // The same values through a differentiable tape.
  ad::Tape tape;
  const BoundParams bound = BoundParams::differentiable(tape, p);
  CHECK(model.apply(tape, bound, z, e, 0.3, 0.9).value() == mean_velocity(model, p, z, e, 0.3, 0.9));
}

TEST_CASE("constant loss has a zero gradient") {
  const UDiTBackbone model(tiny_predictor());
  const ParamStore p = live_params(model, 20);
  const GradientResult g = gradient(p, [&](ad::Tape& tape, const BoundParams& bp) {
    const ad::Var u = model.apply(tape, bp, random_matrix(8, 3, 21), random_matrix(8, 2, 22), 0.1, 0.5);
    return ad::scale(ad::sum(u), 0.0);
  });
  CHECK(g.grad.squared_norm() == 0.0);
}

TEST_CASE("head gradient matches its analytic form") {
  // With every tensor but the head frozen, d/dW of 0.5*||W h + b + [g;g]z||^2 is r h^T.
  const UDiTBackbone model(tiny_predictor());
  const ParamStore p = live_params(model, 23);
  const Spectrogram z = random_matrix(8, 4, 24), e = random_matrix(8, 2, 25);
  const std::size_t w_idx = p.index_of("head.velocity.w");
  const std::size_t b_idx = p.index_of("head.velocity.b");
  const GradientResult g = gradient(p, [&](ad::Tape& tape, const BoundParams& bp) {
    const ad::Var u = model.apply(tape, bp, z, e, 0.0, 1.0);
    return ad::scale(ad::sum(ad::mul(u, u)), 0.5);
  });
  const Spectrogram u = mean_velocity(model, p, z, e, 0.0, 1.0);
  CHECK((g.grad[b_idx] - u.rowwise().sum()).cwiseAbs().maxCoeff() < 1e-10);
  // Recover h from the linear head: perturbing W by one-hot columns is linear in h.
  ParamStore q = p;
  Eigen::MatrixXd h(p[w_idx].cols(), z.cols());
  for (Eigen::Index k = 0; k < h.rows(); ++k) {
    q[w_idx] = p[w_idx];
    q[w_idx](0, k) += 1.0;
    h.row(k) = mean_velocity(model, q, z, e, 0.0, 1.0).row(0) - u.row(0);
  }
  CHECK((g.grad[w_idx] - u * h.transpose()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("full-model gradient matches central differences") {
  const UDiTBackbone model(tiny_predictor());
  const ParamStore p = live_params(model, 26);
  const Spectrogram z = random_matrix(8, 4, 27), e = random_matrix(8, 3, 28), target = random_matrix(8, 4, 29);
  const auto loss_value = [&](const ParamStore& q) {
    return per_sample_mse(mean_velocity(model, q, z, e, 0.2, 0.6) - target);
  };
  const GradientResult g = gradient(p, [&](ad::Tape& tape, const BoundParams& bp) {
    return ad::mean_square(ad::add_const(model.apply(tape, bp, z, e, 0.2, 0.6), -target));
  });
  CHECK(g.loss == doctest::Approx(loss_value(p)).epsilon(1e-14));
  std::mt19937_64 rng(30);
  std::uniform_int_distribution<Eigen::Index> pick(0, p.total_count() - 1);
  const double h = 1e-5;
  for (int i = 0; i < 10; ++i) {
    const Eigen::Index k = pick(rng);
    ParamStore up = p, down = p;
    up.coord(k) += h;
    down.coord(k) -= h;
    const double fd = (loss_value(up) - loss_value(down)) / (2 * h);
    const double an = g.grad.coord(k);
    CHECK(std::abs(fd - an) <= 1e-4 * std::max(std::abs(fd), 1e-6) + 1e-10);
  }
}

TEST_CASE("logistic is stable and strictly inside the unit interval") {
  CHECK(logistic(0.0) == 0.5);
  CHECK(logistic(800.0) < 1.0);
  CHECK(logistic(-800.0) > 0.0);
  CHECK(logistic(2.0) + logistic(-2.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("mixing-ratio regressor predicts inside (0, 1) and counts calls") {
  const MrRegressor mr(MrConfig{});
  const ParamStore p = mr.init_params(31);
  const Waveform y{aftse::testing::random_signal(512, 32), 8000};
  const Waveform e{aftse::testing::random_signal(512, 33), 8000};
  mr.reset_evaluations();
  const double tau = mr_predict(mr, p, y, e);
  CHECK(tau > 0.0);
  CHECK(tau < 1.0);
  CHECK(mr.evaluations() == 1);
  CHECK(mr_predict(mr, p, y, e) == tau);
  CHECK_THROWS_AS(mr_predict(mr, p, Waveform{Eigen::VectorXd(), 8000}, e), ValidationError);
  CHECK_THROWS_AS(mr_predict(mr, p, Waveform{aftse::testing::random_signal(64, 34), 8000}, e), ValidationError);
}

TEST_CASE("mixing-ratio regressor gradient matches central differences") {
  const MrRegressor mr(MrConfig{});
  const ParamStore p = mr.init_params(35);
  const Eigen::MatrixXd fy = mr.features(Waveform{aftse::testing::random_signal(512, 36), 8000});
  const Eigen::MatrixXd fe = mr.features(Waveform{aftse::testing::random_signal(512, 37), 8000});
  const auto value = [&](const ParamStore& q) {
    ad::Tape tape;
    return mr.logit(tape, BoundParams::frozen(tape, q), fy, fe).scalar();
  };
  const GradientResult g = gradient(p, [&](ad::Tape& tape, const BoundParams& bp) { return mr.logit(tape, bp, fy, fe); });
  std::mt19937_64 rng(38);
  std::uniform_int_distribution<Eigen::Index> pick(0, p.total_count() - 1);
  for (int i = 0; i < 10; ++i) {
    const Eigen::Index k = pick(rng);
    ParamStore up = p, down = p;
    up.coord(k) += 1e-5;
    down.coord(k) -= 1e-5;
    const double fd = (value(up) - value(down)) / 2e-5;
    CHECK(std::abs(fd - g.grad.coord(k)) <= 1e-4 * std::max(std::abs(fd), 1e-6) + 1e-9);
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <vector>

#include "aftse/predictor.hpp"
#include "aftse/schedules.hpp"

using namespace aftse;

TEST_CASE("alpha schedule endpoints and midpoint") {
  const AlphaSchedule s;  // epochs 5..100, steepness 15, floor 0.1
  CHECK(std::abs(alpha_at(s, 0.0) - 1.0) < 1e-3);
  CHECK(std::abs(alpha_at(s, 5.0) - 1.0) < 1e-3);
  CHECK(std::abs(alpha_at(s, 100.0) - 0.1) < 1e-3);
  CHECK(std::abs(alpha_at(s, 150.0) - 0.1) < 1e-3);
  CHECK(alpha_at(s, 52.5) == doctest::Approx(0.55).epsilon(1e-12));
}

TEST_CASE("alpha schedule is nonincreasing and stays in range") {
  const AlphaSchedule s{1.0, 8.0, 15.0, 0.1};
  double prev = 2.0;
  for (int i = 0; i <= 1000; ++i) {
    const double a = alpha_at(s, i * 0.012);
    CHECK(a <= prev);
    CHECK(a >= 0.1);
    CHECK(a <= 1.0);
    prev = a;
  }
}

TEST_CASE("alpha schedule rejects bad parameters") {
  CHECK_THROWS_AS((AlphaSchedule{5.0, 5.0, 15.0, 0.1}.validate()), ValidationError);
  CHECK_THROWS_AS((AlphaSchedule{5.0, 10.0, 0.0, 0.1}.validate()), ValidationError);
  CHECK_THROWS_AS((AlphaSchedule{5.0, 10.0, 15.0, 1.0}.validate()), ValidationError);
  CHECK_THROWS_AS((TimeSamplerConfig{-0.4, 0.0}.validate()), ValidationError);
  CHECK_THROWS_AS((TimeSamplerConfig{-0.4, 1.0, 0.15, 0.9, 0.85}.validate()), ValidationError);
}

TEST_CASE("large-span fraction over 1e5 draws") {
  const TimeSamplerConfig cfg;
  Rng rng(1);
  int large = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Interval iv = sample_interval(cfg, rng);
    large += iv.t <= 0.15 && iv.r >= 0.85;
  }
  CHECK(large / static_cast<double>(n) >= 0.15);
}

TEST_CASE("logit-normal median") {
  const TimeSamplerConfig cfg;
  Rng rng(2);
  std::vector<double> draws(100000);
  for (double& d : draws) d = sample_logit_normal(cfg, rng);
  std::nth_element(draws.begin(), draws.begin() + draws.size() / 2, draws.end());
  CHECK(std::abs(draws[draws.size() / 2] - logistic(-0.4)) <= 0.01);
}

TEST_CASE("every interval draw is ordered and strictly inside (0, 1)") {
  const TimeSamplerConfig cfg;
  Rng rng(3);
  bool ok = true;
  for (int i = 0; i < 1000000; ++i) {
    const Interval iv = sample_interval(cfg, rng);
    ok = ok && iv.t > 0.0 && iv.t <= iv.r && iv.r < 1.0;
  }
  CHECK(ok);
}

TEST_CASE("branch rates") {
  Rng rng(4);
  bool all_fm = true, all_mf = true;
  for (int i = 0; i < 1000; ++i) {
    all_fm = all_fm && sample_branch(1.0, rng) == Branch::FlowMatching;
    all_mf = all_mf && sample_branch(0.0, rng) == Branch::MeanFlow;
  }
  CHECK(all_fm);
  CHECK(all_mf);
  int fm = 0;
  for (int i = 0; i < 10000; ++i) fm += sample_branch(0.5, rng) == Branch::FlowMatching;
  CHECK(std::abs(fm / 10000.0 - 0.5) <= 0.02);
  CHECK_THROWS_AS(sample_branch(1.5, rng), ValidationError);
}

TEST_CASE("supervision draws are consistent with their branch") {
  const TimeSamplerConfig cfg;
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const IntervalSample s = sample_supervision(cfg, 0.5, 0.3, rng);
    if (s.branch == Branch::FlowMatching) {
      CHECK(s.t == s.r);
      CHECK(s.alpha == 1.0);
    } else {
      CHECK(s.t < s.r);
      CHECK(s.alpha == 0.3);
      CHECK(s.s == intermediate_time(s.interval(), 0.3));
    }
  }
}

TEST_CASE("identical seeds give identical sequences") {
  const TimeSamplerConfig cfg;
  Rng a(42), b(42), c(43);
  bool same = true, differs = false;
  for (int i = 0; i < 1000; ++i) {
    const IntervalSample x = sample_supervision(cfg, 0.5, 0.5, a);
    const IntervalSample y = sample_supervision(cfg, 0.5, 0.5, b);
    const IntervalSample z = sample_supervision(cfg, 0.5, 0.5, c);
    same = same && x.branch == y.branch && x.t == y.t && x.r == y.r;
    differs = differs || x.t != z.t;
  }
  CHECK(same);
  CHECK(differs);
}

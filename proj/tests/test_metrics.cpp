#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <spdlog/spdlog.h>

#include "aftse/evaluation.hpp"
#include "aftse/metrics.hpp"
#include "test_support.hpp"

using namespace aftse;
using aftse::testing::FixedVelocity;
using aftse::testing::random_signal;

namespace {

double naive_si_sdr(const Eigen::VectorXd& est, const Eigen::VectorXd& ref) {
  double dot = 0.0, energy = 0.0;
  for (Eigen::Index i = 0; i < ref.size(); ++i) {
    dot += est(i) * ref(i);
    energy += ref(i) * ref(i);
  }
  double t = 0.0, e = 0.0;
  for (Eigen::Index i = 0; i < ref.size(); ++i) {
    const double proj = dot / energy * ref(i);
    t += proj * proj;
    e += (est(i) - proj) * (est(i) - proj);
  }
  return 10.0 * std::log10(t / e);
}

Dataset small_dataset() {
  SynthConfig c;
  c.n_train = 0;
  c.n_val = 0;
  c.n_test = 40;
  return generate_dataset(c, 3);
}

}  // namespace

TEST_CASE("SI-SDR definition and ceiling") {
  const Eigen::VectorXd ref = random_signal(1000, 1);
  CHECK(si_sdr(ref, ref) == kSiSdrCeiling);
  CHECK(si_sdr(Eigen::VectorXd(2.0 * ref), ref) == kSiSdrCeiling);
  // Orthogonal noise at a tenth of the reference norm gives 20 dB.
  Eigen::VectorXd noise = random_signal(1000, 2);
  noise -= noise.dot(ref) / ref.squaredNorm() * ref;
  noise *= ref.norm() / 10.0 / noise.norm();
  CHECK(si_sdr(Eigen::VectorXd(ref + noise), ref) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK_THROWS_AS(si_sdr(Eigen::VectorXd::Zero(10), Eigen::VectorXd::Zero(10)), ValidationError);
  CHECK_THROWS_AS(si_sdr(ref, Eigen::VectorXd(ref.head(999))), LengthError);
  CHECK(si_sdr(Eigen::VectorXd::Zero(1000), ref) == -kSiSdrCeiling);
}

TEST_CASE("SI-SDR matches a naive implementation and is scale invariant") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> gain(0.01, 100.0);
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd ref = random_signal(300, 10 + i), est = ref + random_signal(300, 100 + i, 0.05 * (i + 1));
    const double v = si_sdr(est, ref);
    CHECK(std::abs(v - naive_si_sdr(est, ref)) < 1e-9);
    CHECK(std::abs(si_sdr(Eigen::VectorXd(gain(rng) * est), ref) - v) < 1e-9);
  }
}

TEST_CASE("speaker similarity") {
  spdlog::set_level(spdlog::level::err);
  const Dataset ds = small_dataset();
  const Waveform& s = ds.test[0].target;
  CHECK(spk_sim(s, s) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(spk_sim(Waveform{-s.samples, s.sample_rate}, s) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(spk_sim(Waveform{3.0 * s.samples, s.sample_rate}, s) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(spk_sim(Waveform{Eigen::VectorXd::Zero(s.size()), s.sample_rate}, s) == 0.0);
  CHECK(speaker_embedding(s).size() == 64);
  CHECK(speaker_embedding(s).norm() == doctest::Approx(1.0));
  CHECK(speaker_embedding(Waveform{random_signal(40, 5), 8000}).size() == 64);  // shorter than one frame

  // Same-speaker pairs beat cross-speaker pairs by a clear margin.
  double same = 0.0, cross = 0.0;
  for (const auto& m : ds.test) {
    same += spk_sim(m.enrollment, m.target);
    cross += spk_sim(m.enrollment, m.background);
    const double v = spk_sim(m.mixture, m.target);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  same /= ds.test.size();
  cross /= ds.test.size();
  CHECK(same - cross >= 0.2);
}

TEST_CASE("spectral mse") {
  const Spectrogram a = aftse::testing::random_matrix(4, 3, 6);
  CHECK(spectral_mse(a, a) == 0.0);
  CHECK(spectral_mse(a, Spectrogram::Zero(4, 3)) == doctest::Approx(a.squaredNorm() / 12.0));
  CHECK_THROWS_AS(spectral_mse(a, Spectrogram::Zero(4, 2)), ValidationError);
}

TEST_CASE("report summaries average their rows") {
  EvalReport rep;
  for (int i = 0; i < 4; ++i) {
    EvalRow r;
    r.si_sdr = i;
    r.si_sdr_improvement = 2 * i;
    r.tau_star = 0.5;
    r.tau_used = 0.5 + 0.1 * i;
    rep.rows.push_back(r);
  }
  const EvalSummary s = rep.summary();
  CHECK(s.count == 4);
  CHECK(s.si_sdr == 1.5);
  CHECK(s.si_sdr_improvement == 3.0);
  CHECK(s.tau_abs_error == doctest::Approx(0.15));
  CHECK(EvalReport{}.summary().count == 0);
}

TEST_CASE("reference scoring reaches the ceiling everywhere") {
  const Dataset ds = small_dataset();
  EvalOptions opts;
  const EvalReport rep = evaluate_reference(ds.test, opts);
  CHECK(rep.rows.size() == ds.test.size());
  for (const auto& r : rep.rows) {
    CHECK(r.si_sdr == kSiSdrCeiling);
    CHECK(r.spectral_mse == 0.0);
    CHECK(r.spk_sim_ref == doctest::Approx(1.0));
  }
}

TEST_CASE("sensitivity report layout and determinism") {
  spdlog::set_level(spdlog::level::err);
  const Dataset ds = small_dataset();
  const StftConfig sc = StftConfig::desk();
  // Stand-ins: the identity extractor on the mixture path, and on the
  // background path a field that is exact only when the jump starts at tau*.
  const UDiTBackbone zero_model(aftse::testing::tiny_predictor(64));
  const ParamStore zero = zero_model.init_params(0);
  struct OracleBg final : VelocityModel {
    const std::vector<MixtureExample>* set;
    StftConfig sc;
    ParamStore init_params(std::uint64_t) const override { return {}; }
    int channels() const override { return sc.channels(); }
    ad::Var forward(ad::Tape& tape, const BoundParams&, const Spectrogram& z, const Spectrogram&, double t,
                    double) const override {
      for (const auto& m : *set) {
        const Spectrogram y = stft(m.mixture, sc);
        if (y.cols() == z.cols() && y == z) {
          // Velocity of the background path, (S - B): exact at t = tau*.
          return tape.constant(stft(m.target, sc) - stft(m.background, sc));
        }
      }
      (void)t;
      throw std::runtime_error("unknown query");
    }
  } bg;
  bg.set = &ds.test;
  bg.sc = sc;
  const ParamStore none;
  SensitivityOptions opts;
  opts.offsets = {-0.2, 0.0, 0.2};
  opts.eval.inference.stft = sc;
  opts.eval.max_examples = 20;
  const SensitivityReport rep = mr_sensitivity_report({&zero_model, &zero}, {&bg, &none}, ds.test, opts);
  REQUIRE(rep.blocks.size() == 2);
  CHECK(rep.blocks[0].si_sdr_decline() == 0.0);
  CHECK(rep.blocks[0].without_mr.condition == "w/o MR");
  // tau* jump reconstructs the target; tau = 0 overshoots.
  CHECK(rep.blocks[1].with_mr.summary().si_sdr > 50.0);
  CHECK(rep.blocks[1].si_sdr_decline() < -1.0);
  int wins = 0;
  for (std::size_t i = 0; i < rep.blocks[1].with_mr.rows.size(); ++i) {
    wins += rep.blocks[1].with_mr.rows[i].si_sdr >= rep.blocks[1].without_mr.rows[i].si_sdr;
  }
  CHECK(wins >= 18);
  REQUIRE(rep.sweep.size() == 3);
  CHECK(rep.sweep[1].y > rep.sweep[0].y);
  CHECK(rep.sweep[1].y > rep.sweep[2].y);
  REQUIRE(rep.extra.size() == 1);
  CHECK(rep.extra[0].condition == "tau*");

  const SensitivityReport again = mr_sensitivity_report({&zero_model, &zero}, {&bg, &none}, ds.test, opts);
  CHECK(format_ablation_table(rep) == format_ablation_table(again));
  CHECK(format_ablation_table(rep).find("relative decline") != std::string::npos);

  const auto dir = std::filesystem::temp_directory_path() / "aftse_test_metrics";
  std::filesystem::remove_all(dir);
  write_ablation_tsv(dir / "ablation.tsv", rep);
  write_sweep_tsv(dir / "sweep.tsv", rep);
  write_report_tsv(dir / "rows.tsv", {rep.blocks[1].with_mr});
  std::ifstream sweep(dir / "sweep.tsv");
  std::string header;
  std::getline(sweep, header);
  CHECK(header == "series\tx\ty");
  std::size_t lines = 0;
  std::ifstream rows(dir / "rows.tsv");
  for (std::string line; std::getline(rows, line);) ++lines;
  CHECK(lines == 21);
  std::filesystem::remove_all(dir);

  CHECK_THROWS_AS(mr_sensitivity_report({}, {&bg, &none}, ds.test, opts), ValidationError);
}

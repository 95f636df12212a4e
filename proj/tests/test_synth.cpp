#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <set>

#include "aftse/synth_data.hpp"

using namespace aftse;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.n_train = 40;
  c.n_val = 10;
  c.n_test = 10;
  return c;
}

// Comb-contrast pitch estimate: for each candidate on a fine log grid, the
// mean log ratio between the DTFT magnitude at its harmonics below 0.45 fs and
// halfway between them. Subharmonics score about half as much; multiples of
// the fundamental score about the same, so the lowest candidate within 75% of
// the best score wins.
double estimate_f0(const Waveform& w, double lo, double hi) {
  const double fs = w.sample_rate;
  const Eigen::Index n = w.size();
  Eigen::VectorXd win(n);
  for (Eigen::Index i = 0; i < n; ++i) win(i) = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / n);
  const Eigen::VectorXd x = w.samples.cwiseProduct(win);
  const double floor = 1e-6 * x.cwiseAbs().sum();
  const auto dtft = [&](double f) {
    std::complex<double> acc = 0.0;
    const std::complex<double> step = std::polar(1.0, -2 * std::numbers::pi * f / fs);
    std::complex<double> ph = 1.0;
    for (Eigen::Index i = 0; i < n; ++i, ph *= step) acc += x(i) * ph;
    return std::abs(acc) + floor;
  };
  std::vector<double> grid, score;
  for (double f = lo; f <= hi; f *= 1.002) {
    double acc = 0.0;
    int count = 0;
    for (int k = 1; k * f < 0.45 * fs; ++k, ++count) acc += std::log(dtft(k * f) / dtft((k - 0.5) * f));
    grid.push_back(f);
    score.push_back(acc / count);
  }
  const double best = *std::max_element(score.begin(), score.end());
  std::size_t i = 0;
  while (score[i] < 0.75 * best) ++i;
  while (i + 1 < score.size() && score[i + 1] >= score[i]) ++i;
  return grid[i];
}

int nearest_speaker(const std::vector<SyntheticSpeaker>& speakers, double f0) {
  int best = 0;
  double dist = 1e300;
  for (const auto& s : speakers) {
    const double d = std::abs(std::log(f0) - 0.5 * std::log(s.f0_lo * s.f0_hi));
    if (d < dist) {
      dist = d;
      best = s.id;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("speaker bands are disjoint and ordered") {
  const SynthConfig cfg;
  const auto speakers = make_speakers(cfg, 0);
  REQUIRE(speakers.size() == static_cast<std::size_t>(cfg.n_speakers));
  for (std::size_t k = 0; k < speakers.size(); ++k) {
    CHECK(speakers[k].f0_lo < speakers[k].f0_hi);
    CHECK(speakers[k].f0_lo >= cfg.f0_min);
    CHECK(speakers[k].f0_hi <= cfg.f0_max);
    CHECK(speakers[k].harmonic_weights.maxCoeff() == doctest::Approx(1.0));
    if (k > 0) CHECK(speakers[k - 1].f0_hi < speakers[k].f0_lo);
  }
}

TEST_CASE("splits use disjoint speaker sets") {
  const auto tr = speakers_in(Split::Train, 24), va = speakers_in(Split::Val, 24), te = speakers_in(Split::Test, 24);
  CHECK(tr.size() + va.size() + te.size() == 24);
  std::set<int> all(tr.begin(), tr.end());
  for (int v : va) CHECK(all.insert(v).second);
  for (int v : te) CHECK(all.insert(v).second);
  CHECK(tr.size() >= 4);
}

TEST_CASE("examples satisfy the convex identity exactly") {
  const SynthConfig cfg;
  const auto speakers = make_speakers(cfg, 1);
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const MixtureExample m = generate_example(speakers[i % 6], speakers[6 + i % 6], rng, cfg, cfg.duration_s);
    const Eigen::VectorXd rebuilt = (1.0 - m.tau_star) * m.background.samples + m.tau_star * m.target.samples;
    CHECK((m.mixture.samples - rebuilt).cwiseAbs().maxCoeff() == 0.0);
    CHECK(m.tau_star >= cfg.tau_min);
    CHECK(m.tau_star <= cfg.tau_max);
    CHECK(m.mixture.size() == cfg.samples(cfg.duration_s));
    CHECK(m.enrollment.size() == cfg.samples(cfg.enroll_duration_s));
    CHECK(m.target.samples.norm() / std::sqrt(m.target.size()) == doctest::Approx(cfg.level).epsilon(1e-9));
  }
}

TEST_CASE("noise folded into the background keeps the identity") {
  SynthConfig cfg;
  cfg.noise_level = 0.5;
  const auto speakers = make_speakers(cfg, 3);
  Rng rng(4);
  const MixtureExample m = generate_example(speakers[0], speakers[3], rng, cfg, cfg.duration_s);
  CHECK(m.noise_rms > 0.0);
  const Eigen::VectorXd rebuilt = (1.0 - m.tau_star) * m.background.samples + m.tau_star * m.target.samples;
  CHECK((m.mixture.samples - rebuilt).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("the identity carries over to the spectra") {
  const SynthConfig cfg;
  const auto speakers = make_speakers(cfg, 5);
  Rng rng(6);
  const MixtureExample m = generate_example(speakers[2], speakers[9], rng, cfg, cfg.duration_s);
  const StftConfig sc = StftConfig::desk();
  const Spectrogram y = stft(m.mixture, sc);
  const Spectrogram expect = (1.0 - m.tau_star) * stft(m.background, sc) + m.tau_star * stft(m.target, sc);
  CHECK((y - expect).norm() / y.norm() < 1e-10);
}

TEST_CASE("target and enrollment share a fundamental band; the interferer does not") {
  SynthConfig cfg;
  cfg.enroll_duration_s = 0.128;
  const auto speakers = make_speakers(cfg, 7);
  Rng rng(8);
  const auto in_band = [](const SyntheticSpeaker& s, double f0) {
    return f0 >= s.f0_lo * 0.99 && f0 <= s.f0_hi * 1.01;
  };
  int agree = 0;
  const int n = 30;
  for (int i = 0; i < n; ++i) {
    const SyntheticSpeaker& tgt = speakers[static_cast<std::size_t>(3 + i % 18)];
    const SyntheticSpeaker& itf = speakers[static_cast<std::size_t>(i % 3)];
    const MixtureExample m = generate_example(tgt, itf, rng, cfg, 0.128);
    const double fe = estimate_f0(m.enrollment, cfg.f0_min, cfg.f0_max);
    const double fs = estimate_f0(m.target, cfg.f0_min, cfg.f0_max);
    const double fb = estimate_f0(m.background, cfg.f0_min, cfg.f0_max);
    agree += in_band(tgt, fe) && in_band(tgt, fs) && !in_band(tgt, fb);
  }
  CHECK(agree == n);
}

TEST_CASE("a pitch classifier identifies enrollment speakers") {
  const SynthConfig cfg;
  const auto speakers = make_speakers(cfg, 9);
  Rng rng(10);
  int correct = 0;
  const int n = 240;
  for (int i = 0; i < n; ++i) {
    const SyntheticSpeaker& tgt = speakers[static_cast<std::size_t>(i % cfg.n_speakers)];
    const SyntheticSpeaker& itf = speakers[static_cast<std::size_t>((i + 5) % cfg.n_speakers)];
    const MixtureExample m = generate_example(tgt, itf, rng, cfg, cfg.duration_s);
    correct += nearest_speaker(speakers, estimate_f0(m.enrollment, cfg.f0_min * 0.9, cfg.f0_max)) == tgt.id;
  }
  CHECK(correct >= static_cast<int>(0.99 * n));
}

TEST_CASE("datasets are deterministic, sized as configured and leak-free") {
  const SynthConfig cfg = small_config();
  const Dataset a = generate_dataset(cfg, 11);
  const Dataset b = generate_dataset(cfg, 11);
  const Dataset c = generate_dataset(cfg, 12);
  CHECK(a.train.size() == 40);
  CHECK(a.val.size() == 10);
  CHECK(a.test.size() == 10);
  CHECK(a.test.front().mixture.size() == cfg.samples(cfg.test_duration_s));
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].mixture.samples == b.train[i].mixture.samples);
    CHECK(a.train[i].tau_star == b.train[i].tau_star);
  }
  CHECK(a.train[0].mixture.samples != c.train[0].mixture.samples);
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    const auto ids = speakers_in(split, cfg.n_speakers);
    const std::set<int> allowed(ids.begin(), ids.end());
    for (const auto& m : a.split(split)) {
      CHECK(allowed.count(m.target_speaker) == 1);
      CHECK(allowed.count(m.interferer_speaker) == 1);
      CHECK(m.target_speaker != m.interferer_speaker);
      CHECK(m.split == split);
    }
  }
}

TEST_CASE("datasets round trip through disk") {
  const SynthConfig cfg = small_config();
  const Dataset a = generate_dataset(cfg, 13);
  const auto dir = std::filesystem::temp_directory_path() / "aftse_test_synth_ds";
  std::filesystem::remove_all(dir);
  write_dataset(a, dir);
  CHECK(std::filesystem::exists(dir / "manifest.jsonl"));
  CHECK(std::filesystem::exists(dir / "dataset.json"));
  const Dataset b = load_dataset(dir);
  CHECK(b.seed == 13);
  CHECK(b.speakers.size() == a.speakers.size());
  REQUIRE(b.test.size() == a.test.size());
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    CHECK(b.test[i].mixture.samples == a.test[i].mixture.samples);
    CHECK(b.test[i].enrollment.samples == a.test[i].enrollment.samples);
    CHECK(b.test[i].tau_star == a.test[i].tau_star);
    CHECK(b.test[i].target_speaker == a.test[i].target_speaker);
  }
  std::filesystem::remove_all(dir);
  CHECK_THROWS(load_dataset(dir));
}

TEST_CASE("configuration is validated") {
  SynthConfig c;
  c.n_speakers = 4;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = SynthConfig{};
  c.f0_max = 4000;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = SynthConfig{};
  c.tau_min = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK_THROWS_AS(split_from_string("dev"), ValidationError);
}

#include "aftse/synth_data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "aftse/audio_io.hpp"
#include "aftse/errors.hpp"

namespace aftse {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kMaxHarmonicFraction = 0.45;  // of the sample rate
constexpr Eigen::Index kGateRamp = 16;

Rng derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return Rng(seq);
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace

Eigen::Index SynthConfig::samples(double seconds) const {
  return static_cast<Eigen::Index>(std::llround(seconds * sample_rate));
}

void SynthConfig::validate() const {
  if (sample_rate <= 0) throw ValidationError("synth: sample_rate must be positive");
  if (n_speakers < 6) throw ValidationError("synth: need at least 6 speakers to fill three disjoint splits");
  if (!(f0_min > 0.0 && f0_min < f0_max)) throw ValidationError("synth: need 0 < f0_min < f0_max");
  if (!(f0_max < kMaxHarmonicFraction * sample_rate)) throw ValidationError("synth: f0_max above usable band");
  if (!(band_fill > 0.0 && band_fill < 1.0)) throw ValidationError("synth: band_fill must lie in (0, 1)");
  if (!(duration_s > 0.0 && test_duration_s > 0.0 && enroll_duration_s > 0.0)) {
    throw ValidationError("synth: durations must be positive");
  }
  if (!(tau_min > 0.0 && tau_min <= tau_max && tau_max < 1.0)) {
    throw ValidationError("synth: need 0 < tau_min <= tau_max < 1");
  }
  if (!(level > 0.0) || noise_level < 0.0) throw ValidationError("synth: invalid level/noise_level");
  if (n_train < 0 || n_val < 0 || n_test < 0) throw ValidationError("synth: split sizes must be non-negative");
}

const char* to_string(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split '" + s + "'");
}

std::vector<SyntheticSpeaker> make_speakers(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = derived_rng(seed, 0x5eed, 0);
  const double ratio = std::pow(cfg.f0_max / cfg.f0_min, 1.0 / cfg.n_speakers);
  const double margin = 0.5 * (1.0 - cfg.band_fill);
  std::vector<SyntheticSpeaker> out;
  for (int k = 0; k < cfg.n_speakers; ++k) {
    SyntheticSpeaker spk;
    spk.id = k;
    spk.f0_lo = cfg.f0_min * std::pow(ratio, k + margin);
    spk.f0_hi = cfg.f0_min * std::pow(ratio, k + 1 - margin);
    const double formant = std::exp(uniform(rng, std::log(300.0), std::log(0.4 * cfg.sample_rate)));
    const double bandwidth = uniform(rng, 250.0, 800.0);
    const double tilt = uniform(rng, 0.3, 1.2);
    const double f0c = std::sqrt(spk.f0_lo * spk.f0_hi);
    const auto n_harm = static_cast<Eigen::Index>(kMaxHarmonicFraction * cfg.sample_rate / spk.f0_lo);
    spk.harmonic_weights.resize(n_harm);
    for (Eigen::Index h = 0; h < n_harm; ++h) {
      const double fh = static_cast<double>(h + 1) * f0c;
      const double peak = std::exp(-0.5 * std::pow((fh - formant) / bandwidth, 2));
      spk.harmonic_weights(h) = std::pow(static_cast<double>(h + 1), -tilt) * (0.15 + peak);
    }
    spk.harmonic_weights /= spk.harmonic_weights.maxCoeff();
    spk.am_rate = uniform(rng, 2.0, 6.0);
    spk.am_depth = uniform(rng, 0.1, 0.5);
    spk.fm_rate = uniform(rng, 3.0, 7.0);
    spk.fm_depth = uniform(rng, 0.002, 0.01);
    out.push_back(std::move(spk));
  }
  return out;
}

std::vector<int> speakers_in(Split split, int n_speakers) {
  // Interleaved so every split spans the whole f0 range.
  std::vector<int> ids;
  for (int k = 0; k < n_speakers; ++k) {
    const int slot = k % 6;
    const Split s = slot == 1 ? Split::Val : slot == 4 ? Split::Test : Split::Train;
    if (s == split) ids.push_back(k);
  }
  return ids;
}

Eigen::VectorXd render_speaker(const SyntheticSpeaker& spk, Eigen::Index n, int sample_rate, double rms, Rng& rng) {
  if (n <= 0) throw ValidationError("render_speaker: length must be positive");
  const double fs = sample_rate;
  const double f0 = uniform(rng, spk.f0_lo, spk.f0_hi);
  const double fm_phase = uniform(rng, 0.0, kTwoPi);
  const double am_phase = uniform(rng, 0.0, kTwoPi);
  const double f_top = f0 * (1.0 + spk.fm_depth);
  Eigen::Index n_harm = 0;
  while (n_harm < spk.harmonic_weights.size() && (n_harm + 1) * f_top < kMaxHarmonicFraction * fs) ++n_harm;
  Eigen::VectorXd amp(n_harm), phase(n_harm);
  for (Eigen::Index h = 0; h < n_harm; ++h) {
    amp(h) = spk.harmonic_weights(h) * uniform(rng, 0.9, 1.1);
    phase(h) = uniform(rng, 0.0, kTwoPi);
  }

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  double theta = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double time = static_cast<double>(i) / fs;
    const double f_inst = f0 * (1.0 + spk.fm_depth * std::sin(kTwoPi * spk.fm_rate * time + fm_phase));
    double v = 0.0;
    for (Eigen::Index h = 0; h < n_harm; ++h) v += amp(h) * std::sin(static_cast<double>(h + 1) * theta + phase(h));
    x(i) = v * (1.0 + spk.am_depth * std::sin(kTwoPi * spk.am_rate * time + am_phase));
    theta += kTwoPi * f_inst / fs;
  }

  // Onset/offset gating with raised-cosine ramps.
  const auto onset = static_cast<Eigen::Index>(uniform(rng, 0.0, 0.15) * static_cast<double>(n));
  const auto offset = static_cast<Eigen::Index>(uniform(rng, 0.85, 1.0) * static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double g = 1.0;
    if (i < onset || i >= offset) {
      g = 0.0;
    } else if (i < onset + kGateRamp) {
      g = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i - onset) / kGateRamp);
    } else if (i >= offset - kGateRamp) {
      g = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(offset - i) / kGateRamp);
    }
    x(i) *= g;
  }
  const double cur = std::sqrt(x.squaredNorm() / static_cast<double>(n));
  if (cur > 0.0) x *= rms / cur;
  return x;
}

MixtureExample generate_example(const SyntheticSpeaker& target, const SyntheticSpeaker& interferer, Rng& rng,
                                const SynthConfig& cfg, double duration_s) {
  if (target.id == interferer.id) throw ValidationError("generate_example: speakers must differ");
  const Eigen::Index n = cfg.samples(duration_s);
  MixtureExample ex;
  ex.target_speaker = target.id;
  ex.interferer_speaker = interferer.id;
  ex.tau_star = uniform(rng, cfg.tau_min, cfg.tau_max);

  Eigen::VectorXd s = render_speaker(target, n, cfg.sample_rate, cfg.level, rng);
  Eigen::VectorXd b = render_speaker(interferer, n, cfg.sample_rate, cfg.level, rng);
  if (cfg.noise_level > 0.0) {
    std::normal_distribution<double> white(0.0, 1.0);
    Eigen::VectorXd noise(n);
    double state = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      state = 0.7 * state + 0.3 * white(rng);
      noise(i) = state;
    }
    noise -= Eigen::VectorXd::Constant(n, noise.mean());
    const double cur = std::sqrt(noise.squaredNorm() / static_cast<double>(n));
    ex.noise_rms = cfg.noise_level * cfg.level;
    if (cur > 0.0) b += noise * (ex.noise_rms / cur);
  }
  const double tau = ex.tau_star;
  Eigen::VectorXd y = (1.0 - tau) * b + tau * s;

  ex.mixture = {std::move(y), cfg.sample_rate};
  ex.target = {std::move(s), cfg.sample_rate};
  ex.background = {std::move(b), cfg.sample_rate};
  ex.enrollment = {render_speaker(target, cfg.samples(cfg.enroll_duration_s), cfg.sample_rate, cfg.level, rng),
                   cfg.sample_rate};
  return ex;
}

const std::vector<MixtureExample>& Dataset::split(Split s) const {
  return s == Split::Train ? train : s == Split::Val ? val : test;
}

Dataset generate_dataset(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  ds.seed = seed;
  ds.speakers = make_speakers(cfg, seed);
  const std::pair<Split, int> plan[] = {{Split::Train, cfg.n_train}, {Split::Val, cfg.n_val}, {Split::Test, cfg.n_test}};
  for (const auto& [split, count] : plan) {
    const std::vector<int> ids = speakers_in(split, cfg.n_speakers);
    auto& out = split == Split::Train ? ds.train : split == Split::Val ? ds.val : ds.test;
    const double duration = split == Split::Test ? cfg.test_duration_s : cfg.duration_s;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      Rng rng = derived_rng(seed, static_cast<std::uint64_t>(split) + 1, static_cast<std::uint64_t>(i));
      std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
      const int a = ids[pick(rng)];
      int b = a;
      while (b == a) b = ids[pick(rng)];
      MixtureExample ex = generate_example(ds.speakers[static_cast<std::size_t>(a)],
                                           ds.speakers[static_cast<std::size_t>(b)], rng, cfg, duration);
      ex.split = split;
      out.push_back(std::move(ex));
    }
  }
  return ds;
}

namespace {

nlohmann::json config_json(const SynthConfig& c) {
  return {{"sample_rate", c.sample_rate}, {"n_speakers", c.n_speakers},
          {"f0_min", c.f0_min},           {"f0_max", c.f0_max},
          {"band_fill", c.band_fill},     {"duration_s", c.duration_s},
          {"test_duration_s", c.test_duration_s}, {"enroll_duration_s", c.enroll_duration_s},
          {"tau_min", c.tau_min},         {"tau_max", c.tau_max},
          {"level", c.level},             {"noise_level", c.noise_level},
          {"n_train", c.n_train},         {"n_val", c.n_val},
          {"n_test", c.n_test}};
}

SynthConfig config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.sample_rate = j.at("sample_rate");
  c.n_speakers = j.at("n_speakers");
  c.f0_min = j.at("f0_min");
  c.f0_max = j.at("f0_max");
  c.band_fill = j.at("band_fill");
  c.duration_s = j.at("duration_s");
  c.test_duration_s = j.at("test_duration_s");
  c.enroll_duration_s = j.at("enroll_duration_s");
  c.tau_min = j.at("tau_min");
  c.tau_max = j.at("tau_max");
  c.level = j.at("level");
  c.noise_level = j.at("noise_level");
  c.n_train = j.at("n_train");
  c.n_val = j.at("n_val");
  c.n_test = j.at("n_test");
  return c;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json meta = {{"seed", ds.seed}, {"config", config_json(ds.config)}, {"speakers", nlohmann::json::array()}};
  for (const auto& s : ds.speakers) {
    meta["speakers"].push_back({{"id", s.id},
                                {"f0_lo", s.f0_lo},
                                {"f0_hi", s.f0_hi},
                                {"harmonic_weights", std::vector<double>(s.harmonic_weights.data(),
                                                                         s.harmonic_weights.data() + s.harmonic_weights.size())},
                                {"am_rate", s.am_rate},
                                {"am_depth", s.am_depth},
                                {"fm_rate", s.fm_rate},
                                {"fm_depth", s.fm_depth}});
  }
  std::ofstream(dir / "dataset.json") << meta.dump(2) << '\n';

  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.jsonl").string());
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    const auto& exs = ds.split(split);
    if (exs.empty()) continue;
    fs::create_directories(dir / to_string(split));
    for (std::size_t i = 0; i < exs.size(); ++i) {
      const auto& ex = exs[i];
      char id[32];
      std::snprintf(id, sizeof id, "%s%06zu", to_string(split), i);
      const std::string base = std::string(to_string(split)) + "/" + id;
      write_wav(dir / (base + "_mix.wav"), ex.mixture, WavEncoding::Float64);
      write_wav(dir / (base + "_target.wav"), ex.target, WavEncoding::Float64);
      write_wav(dir / (base + "_background.wav"), ex.background, WavEncoding::Float64);
      write_wav(dir / (base + "_enroll.wav"), ex.enrollment, WavEncoding::Float64);
      nlohmann::json rec = {{"id", id},
                            {"split", to_string(split)},
                            {"target_speaker", ex.target_speaker},
                            {"interferer_speaker", ex.interferer_speaker},
                            {"tau_star", ex.tau_star},
                            {"duration_s", static_cast<double>(ex.mixture.size()) / ex.mixture.sample_rate},
                            {"sample_rate", ex.mixture.sample_rate},
                            {"noise_rms", ex.noise_rms},
                            {"mixture", base + "_mix.wav"},
                            {"target", base + "_target.wav"},
                            {"background", base + "_background.wav"},
                            {"enrollment", base + "_enroll.wav"}};
      manifest << rec.dump() << '\n';
    }
  }
  if (!manifest) throw IoError("write failed: " + (dir / "manifest.jsonl").string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "dataset.json");
  if (!meta_in) throw IoError("cannot open " + (dir / "dataset.json").string());
  const auto meta = nlohmann::json::parse(meta_in);
  Dataset ds;
  ds.seed = meta.at("seed");
  ds.config = config_from_json(meta.at("config"));
  for (const auto& s : meta.at("speakers")) {
    SyntheticSpeaker spk;
    spk.id = s.at("id");
    spk.f0_lo = s.at("f0_lo");
    spk.f0_hi = s.at("f0_hi");
    const auto w = s.at("harmonic_weights").get<std::vector<double>>();
    spk.harmonic_weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    spk.am_rate = s.at("am_rate");
    spk.am_depth = s.at("am_depth");
    spk.fm_rate = s.at("fm_rate");
    spk.fm_depth = s.at("fm_depth");
    ds.speakers.push_back(std::move(spk));
  }
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw IoError("cannot open " + (dir / "manifest.jsonl").string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("manifest.jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
    MixtureExample ex;
    ex.split = split_from_string(rec.at("split"));
    ex.target_speaker = rec.at("target_speaker");
    ex.interferer_speaker = rec.at("interferer_speaker");
    ex.tau_star = rec.at("tau_star");
    ex.noise_rms = rec.value("noise_rms", 0.0);
    ex.mixture = read_wav(dir / rec.at("mixture").get<std::string>());
    ex.target = read_wav(dir / rec.at("target").get<std::string>());
    ex.background = read_wav(dir / rec.at("background").get<std::string>());
    ex.enrollment = read_wav(dir / rec.at("enrollment").get<std::string>());
    (ex.split == Split::Train ? ds.train : ex.split == Split::Val ? ds.val : ds.test).push_back(std::move(ex));
  }
  return ds;
}

}  // namespace aftse

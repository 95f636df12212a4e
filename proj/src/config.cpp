#include "aftse/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "aftse/errors.hpp"

namespace aftse {

using nlohmann::json;

namespace {

// Each section lists its fields once; the same visitor drives both
// serialisation directions.
template <typename F>
void visit_fields(StftConfig& c, F&& f) {
  f("n_fft", c.n_fft);
  f("hop", c.hop);
}
template <typename F>
void visit_fields(SynthConfig& c, F&& f) {
  f("sample_rate", c.sample_rate);
  f("n_speakers", c.n_speakers);
  f("f0_min", c.f0_min);
  f("f0_max", c.f0_max);
  f("band_fill", c.band_fill);
  f("duration_s", c.duration_s);
  f("test_duration_s", c.test_duration_s);
  f("enroll_duration_s", c.enroll_duration_s);
  f("tau_min", c.tau_min);
  f("tau_max", c.tau_max);
  f("level", c.level);
  f("noise_level", c.noise_level);
  f("n_train", c.n_train);
  f("n_val", c.n_val);
  f("n_test", c.n_test);
}
template <typename F>
void visit_fields(PredictorConfig& c, F&& f) {
  f("channels", c.channels);
  f("n_blocks", c.n_blocks);
  f("n_heads", c.n_heads);
  f("width", c.width);
  f("mlp_hidden", c.mlp_hidden);
  f("time_embed_dim", c.time_embed_dim);
  f("max_prefix_frames", c.max_prefix_frames);
}
template <typename F>
void visit_fields(ObjectiveConfig& c, F&& f) {
  f("gamma", c.gamma);
  f("eps_adp", c.eps_adp);
  f("kappa", c.kappa);
  f("eps_bnd", c.eps_bnd);
  f("lambda_fm", c.lambda_fm);
  f("lambda_mf", c.lambda_mf);
  f("rho", c.rho);
}
template <typename F>
void visit_fields(AlphaSchedule& c, F&& f) {
  f("start_epoch", c.start_epoch);
  f("end_epoch", c.end_epoch);
  f("steepness", c.steepness);
  f("alpha_min", c.alpha_min);
}
template <typename F>
void visit_fields(TimeSamplerConfig& c, F&& f) {
  f("mu", c.mu);
  f("sigma", c.sigma);
  f("large_span_prob", c.large_span_prob);
  f("t_max_large", c.t_max_large);
  f("r_min_large", c.r_min_large);
}
template <typename F>
void visit_fields(OptimizerConfig& c, F&& f) {
  f("beta1", c.beta1);
  f("beta2", c.beta2);
  f("eps", c.eps);
  f("weight_decay", c.weight_decay);
}
template <typename F>
void visit_fields(TrainConfig& c, F&& f) {
  f("epochs", c.epochs);
  f("lr_init", c.lr_init);
  f("warmup_steps", c.warmup_steps);
  f("clip_norm", c.clip_norm);
  f("batch_size", c.batch_size);
  f("grad_accum_steps", c.grad_accum_steps);
  f("seed", c.seed);
  f("workers", c.workers);
  f("checkpoint_every", c.checkpoint_every);
  f("val_examples", c.val_examples);
  f("path_kind", c.path_kind);
  f("objective", c.objective);
  f("schedule", c.schedule);
  f("sampler", c.sampler);
  f("optimizer", c.optimizer);
}
template <typename F>
void visit_fields(MrConfig& c, F&& f) {
  f("n_fft", c.n_fft);
  f("hop", c.hop);
  f("conv_channels", c.conv_channels);
  f("kernel", c.kernel);
  f("stride", c.stride);
  f("hidden", c.hidden);
  f("mask_prob", c.mask_prob);
  f("max_mask_frames", c.max_mask_frames);
  f("max_mask_bins", c.max_mask_bins);
  f("max_shift_bins", c.max_shift_bins);
}
template <typename F>
void visit_fields(MrTrainConfig& c, F&& f) {
  f("epochs", c.epochs);
  f("lr", c.lr);
  f("warmup_steps", c.warmup_steps);
  f("clip_norm", c.clip_norm);
  f("batch_size", c.batch_size);
  f("seed", c.seed);
  f("workers", c.workers);
  f("optimizer", c.optimizer);
}
template <typename F>
void visit_fields(InferenceConfig& c, F&& f) {
  f("chunk_frames", c.chunk_frames);
  f("use_mr", c.use_mr);
}
template <typename F>
void visit_fields(EvalConfig& c, F&& f) {
  f("max_examples", c.max_examples);
  f("workers", c.workers);
  f("tau_offsets", c.tau_offsets);
}

template <typename C>
json write_fields(const C& c) {
  json j = json::object();
  visit_fields(const_cast<C&>(c), [&](const char* key, const auto& v) { j[key] = v; });
  return j;
}

template <typename C>
void read_fields(const json& j, C& c) {
  visit_fields(c, [&](const char* key, auto& v) {
    if (j.contains(key)) j.at(key).get_to(v);
  });
}

}  // namespace

PathKind path_kind_from_string(const std::string& s) {
  if (s == "mixture_to_target" || s == "m2t") return PathKind::MixtureToTarget;
  if (s == "background_to_target" || s == "bg") return PathKind::BackgroundToTarget;
  throw ValidationError("unknown path kind '" + s + "' (expected mixture_to_target or background_to_target)");
}

void to_json(json& j, const PathKind& k) { j = to_string(k); }
void from_json(const json& j, PathKind& k) { k = path_kind_from_string(j.get<std::string>()); }

void to_json(json& j, const ObjectiveConfig& c) { j = write_fields(c); }
void from_json(const json& j, ObjectiveConfig& c) { read_fields(j, c); }
void to_json(json& j, const AlphaSchedule& c) { j = write_fields(c); }
void from_json(const json& j, AlphaSchedule& c) { read_fields(j, c); }
void to_json(json& j, const TimeSamplerConfig& c) { j = write_fields(c); }
void from_json(const json& j, TimeSamplerConfig& c) { read_fields(j, c); }
void to_json(json& j, const OptimizerConfig& c) { j = write_fields(c); }
void from_json(const json& j, OptimizerConfig& c) { read_fields(j, c); }

void to_json(json& j, const StftConfig& c) { j = write_fields(c); }
void from_json(const json& j, StftConfig& c) { read_fields(j, c); }
void to_json(json& j, const SynthConfig& c) { j = write_fields(c); }
void from_json(const json& j, SynthConfig& c) { read_fields(j, c); }
void to_json(json& j, const PredictorConfig& c) { j = write_fields(c); }
void from_json(const json& j, PredictorConfig& c) { read_fields(j, c); }
void to_json(json& j, const TrainConfig& c) { j = write_fields(c); }
void from_json(const json& j, TrainConfig& c) { read_fields(j, c); }
void to_json(json& j, const MrConfig& c) { j = write_fields(c); }
void from_json(const json& j, MrConfig& c) { read_fields(j, c); }
void to_json(json& j, const MrTrainConfig& c) { j = write_fields(c); }
void from_json(const json& j, MrTrainConfig& c) { read_fields(j, c); }
void to_json(json& j, const InferenceConfig& c) { j = write_fields(c); }
void from_json(const json& j, InferenceConfig& c) { read_fields(j, c); }
void to_json(json& j, const EvalConfig& c) { j = write_fields(c); }
void from_json(const json& j, EvalConfig& c) { read_fields(j, c); }

void RepoConfig::validate() const {
  if (preset != "paper" && preset != "desk") throw ValidationError("config.preset: must be 'paper' or 'desk'");
  stft.validate();
  data.validate();
  predictor.validate();
  train.validate();
  mr.validate();
  mr_train.validate();
  inference.validate();
  if (!(inference.stft == stft)) throw ValidationError("config: inference STFT must match config.stft");
  if (predictor.channels != stft.channels()) {
    throw ValidationError("config.predictor.channels: must equal 2F = " + std::to_string(stft.channels()) +
                          " for n_fft = " + std::to_string(stft.n_fft));
  }
  const Eigen::Index shortest = data.samples(std::min({data.duration_s, data.enroll_duration_s}));
  if (shortest < stft.n_fft || shortest < mr.n_fft) {
    throw ValidationError("config.data: clips shorter than one STFT frame");
  }
  if (eval.workers < 1) throw ValidationError("config.eval.workers: must be >= 1");
}

namespace {

void check_keys(const json& user, const json& reference, const std::string& path) {
  for (const auto& [key, value] : user.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!reference.contains(key)) throw ValidationError("config: unknown key '" + where + "'");
    const json& ref = reference.at(key);
    const auto fail = [&](const char* expected) {
      throw ValidationError("config: '" + where + "' must be " + expected + ", got " + value.dump());
    };
    if (ref.is_object()) {
      if (!value.is_object()) fail("an object");
      check_keys(value, ref, where);
    } else if (ref.is_boolean()) {
      if (!value.is_boolean()) fail("a boolean");
    } else if (ref.is_string()) {
      if (!value.is_string()) fail("a string");
    } else if (ref.is_array()) {
      if (!value.is_array()) fail("an array");
      for (const auto& v : value) {
        if (!v.is_number()) fail("an array of numbers");
      }
    } else if (ref.is_number_integer()) {
      if (!value.is_number()) fail("an integer");
      if (value.is_number_float() && value.get<double>() != std::floor(value.get<double>())) fail("an integer");
      if (ref.is_number_unsigned() && value.get<double>() < 0) fail("a non-negative integer");
    } else if (ref.is_number()) {
      if (!value.is_number()) fail("a number");
    }
  }
}

}  // namespace

RepoConfig preset_config(const std::string& name) {
  RepoConfig c;  // paper preset
  c.preset = "paper";
  c.stft = StftConfig::paper();
  c.data.sample_rate = 16000;
  c.data.duration_s = 3.0;
  c.data.test_duration_s = 6.0;
  c.data.enroll_duration_s = 3.0;
  c.predictor.channels = c.stft.channels();
  c.predictor.n_blocks = 16;
  c.predictor.n_heads = 16;
  c.predictor.width = 1024;
  c.predictor.mlp_hidden = 4096;
  c.predictor.time_embed_dim = 256;
  c.predictor.max_prefix_frames = 512;
  c.train = TrainConfig{};
  c.mr = MrConfig{};
  c.mr.n_fft = 510;
  c.mr.hop = 128;
  c.mr.conv_channels = 128;
  c.mr.hidden = 256;
  c.mr.mask_prob = 0.5;
  c.mr.max_mask_frames = 20;
  c.mr.max_mask_bins = 20;
  c.inference.stft = c.stft;
  c.inference.chunk_frames = c.stft.frames_for(c.data.samples(c.data.duration_s));
  if (name == "paper") return c;
  if (name != "desk") throw ValidationError("unknown preset '" + name + "' (expected paper or desk)");

  c.preset = "desk";
  c.stft = StftConfig::desk();
  c.data = SynthConfig{};
  c.predictor.channels = c.stft.channels();
  c.predictor.n_blocks = 4;
  c.predictor.n_heads = 4;
  c.predictor.width = 64;
  c.predictor.mlp_hidden = 128;
  c.predictor.time_embed_dim = 32;
  c.predictor.max_prefix_frames = 64;
  c.train.epochs = 30;
  c.train.lr_init = 1e-3;
  c.train.warmup_steps = 100;
  c.train.clip_norm = 1.0;
  c.train.batch_size = 16;
  c.train.val_examples = 32;
  c.train.schedule.start_epoch = 1.0;
  c.train.schedule.end_epoch = 20.0;
  c.mr = MrConfig{};
  c.mr.max_shift_bins = 5;
  c.mr_train = MrTrainConfig{};
  c.mr_train.epochs = 60;
  c.mr_train.lr = 3e-3;
  c.inference.stft = c.stft;
  c.inference.chunk_frames = c.stft.frames_for(c.data.samples(c.data.duration_s));
  c.eval.max_examples = 0;
  return c;
}

json config_to_json(const RepoConfig& c) {
  return {{"preset", c.preset},   {"seed", c.seed},           {"stft", c.stft},
          {"data", c.data},       {"predictor", c.predictor}, {"train", c.train},
          {"mr", c.mr},           {"mr_train", c.mr_train},   {"inference", c.inference},
          {"eval", c.eval}};
}

RepoConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ValidationError("config: top level must be a JSON object");
  std::string preset = "paper";
  if (doc.contains("preset")) {
    if (!doc.at("preset").is_string()) throw ValidationError("config: 'preset' must be a string");
    preset = doc.at("preset").get<std::string>();
  }
  const RepoConfig base = preset_config(preset);
  json merged = config_to_json(base);
  check_keys(doc, merged, "");
  merged.merge_patch(doc);

  RepoConfig c = base;
  c.seed = merged.at("seed").get<std::uint64_t>();
  merged.at("stft").get_to(c.stft);
  merged.at("data").get_to(c.data);
  merged.at("predictor").get_to(c.predictor);
  merged.at("train").get_to(c.train);
  merged.at("mr").get_to(c.mr);
  merged.at("mr_train").get_to(c.mr_train);
  merged.at("inference").get_to(c.inference);
  merged.at("eval").get_to(c.eval);
  // The inference front end always follows the model's STFT.
  c.inference.stft = c.stft;
  c.validate();
  return c;
}

RepoConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

void save_config(const std::filesystem::path& path, const RepoConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << config_to_json(cfg).dump(2) << '\n';
}

std::optional<std::filesystem::path> default_config_path() {
  if (const char* v = std::getenv("AFTSE_CONFIG"); v != nullptr && *v != '\0') return std::filesystem::path(v);
  return std::nullopt;
}

}  // namespace aftse

#include "aftse/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <spdlog/spdlog.h>

#include "aftse/config.hpp"
#include "aftse/errors.hpp"
#include "aftse/evaluation.hpp"
#include "aftse/parallel.hpp"

#ifndef AFTSE_CODE_VERSION
#define AFTSE_CODE_VERSION "unknown"
#endif

namespace aftse {

using nlohmann::json;

const char* code_version() { return AFTSE_CODE_VERSION; }

namespace {

double warmup_cosine(double peak, long warmup, long step, long total) {
  if (step < 0) throw ValidationError("learning-rate schedule: step must be >= 0");
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  const long span = std::max(1L, total - warmup);
  const double progress = std::clamp(static_cast<double>(step - warmup) / static_cast<double>(span), 0.0, 1.0);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Independent stream per (seed, step, example).
Rng example_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t example) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step),    static_cast<std::uint32_t>(step >> 32),
                    static_cast<std::uint32_t>(example), static_cast<std::uint32_t>(example >> 32)};
  return Rng(seq);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = example_rng(seed, 0xE90C0000ULL + static_cast<std::uint64_t>(epoch), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

ParamStore mean_of(std::vector<GradientResult>& parts) {
  ParamStore sum = std::move(parts.front().grad);
  for (std::size_t i = 1; i < parts.size(); ++i) sum += parts[i].grad;
  sum *= 1.0 / static_cast<double>(parts.size());
  return sum;
}

void write_json_atomic(const std::filesystem::path& path, const json& doc) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp);
    out << doc.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

json breakdown_json(const LossBreakdown& b) {
  return {{"branch", to_string(b.branch)}, {"alpha", b.alpha},       {"t", b.t},
          {"r", b.r},                      {"raw_mse", b.raw_mse},   {"weight", b.weight},
          {"weighted", b.weighted},        {"total", b.total}};
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("optimizer: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ValidationError("optimizer: eps must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("optimizer: weight_decay must be >= 0");
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw ValidationError("train.epochs must be positive");
  if (!(lr_init > 0.0)) throw ValidationError("train.lr_init must be positive");
  if (warmup_steps < 0) throw ValidationError("train.warmup_steps must be >= 0");
  if (!(clip_norm > 0.0)) throw ValidationError("train.clip_norm must be positive");
  if (batch_size <= 0 || grad_accum_steps <= 0) throw ValidationError("train: batch_size and grad_accum_steps must be positive");
  if (workers <= 0) throw ValidationError("train.workers must be positive");
  if (checkpoint_every < 0 || val_examples < 0) throw ValidationError("train: checkpoint_every/val_examples must be >= 0");
  objective.validate();
  schedule.validate();
  sampler.validate();
  optimizer.validate();
}

long TrainConfig::steps_per_epoch(std::size_t n_examples) const {
  const auto per = static_cast<std::size_t>(examples_per_step());
  return static_cast<long>((n_examples + per - 1) / per);
}

double lr_at(const TrainConfig& cfg, long step, long total_steps) {
  return warmup_cosine(cfg.lr_init, cfg.warmup_steps, step, total_steps);
}

AdamW::AdamW(OptimizerConfig cfg, const ParamStore& like) : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {
  cfg_.validate();
}

void AdamW::step(ParamStore& params, const ParamStore& grad, double lr) {
  if (!params.same_layout(grad) || !params.same_layout(m_)) throw ValidationError("AdamW: layout mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].array();
    const auto g = grad[i].array();
    auto m = m_[i].array();
    auto v = v_[i].array();
    p *= 1.0 - lr * cfg_.weight_decay;
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.square();
    p -= lr * (m / c1) / ((v / c2).sqrt() + cfg_.eps);
  }
}

void AdamW::restore(ParamStore m, ParamStore v, long t) {
  if (!m.same_layout(m_) || !v.same_layout(v_)) throw ValidationError("AdamW::restore: layout mismatch");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

double clip_grad_norm(ParamStore& grad, double max_norm) {
  if (!(max_norm > 0.0)) throw ValidationError("clip_grad_norm: max_norm must be positive");
  const double norm = std::sqrt(grad.squared_norm());
  if (norm > max_norm) grad *= max_norm / norm;
  return norm;
}

SpectralExample spectral_example(const MixtureExample& ex, const StftConfig& stft_cfg) {
  return {stft(ex.mixture, stft_cfg), stft(ex.target, stft_cfg), stft(ex.background, stft_cfg),
          stft(ex.enrollment, stft_cfg), ex.tau_star};
}

StepReport train_step(const VelocityModel& model, const TrainConfig& cfg, TrainState& state,
                      const std::vector<const SpectralExample*>& batch, const std::vector<std::size_t>& example_ids,
                      long total_steps, double epoch) {
  if (batch.empty()) throw ValidationError("train_step: empty batch");
  if (batch.size() != example_ids.size()) throw ValidationError("train_step: batch/id size mismatch");

  StepReport rep;
  rep.step = state.step;
  rep.epoch = epoch;
  rep.alpha = alpha_at(cfg.schedule, epoch);
  rep.lr = lr_at(cfg, state.step, total_steps);
  rep.example_ids = example_ids;

  const std::size_t n = batch.size();
  std::vector<GradientResult> grads(n);
  std::vector<LossBreakdown> items(n);
  std::vector<std::string> errors(n);
  parallel_for(n, static_cast<std::size_t>(cfg.workers), [&](std::size_t i) {
    Rng rng = example_rng(cfg.seed, static_cast<std::uint64_t>(state.step), example_ids[i]);
    const IntervalSample sample = sample_supervision(cfg.sampler, cfg.objective.rho, rep.alpha, rng);
    items[i].branch = sample.branch;
    items[i].alpha = sample.alpha;
    items[i].t = sample.t;
    items[i].r = sample.r;
    try {
      grads[i] = gradient(state.params, [&](ad::Tape& tape, const BoundParams& bound) {
        LossTerm term = total_loss(model, tape, bound, state.params, *batch[i], cfg.path_kind, sample, cfg.objective);
        items[i] = term.info;
        return term.total;
      });
    } catch (const NonFiniteLoss& e) {
      errors[i] = "example " + std::to_string(example_ids[i]) + " (" + to_string(sample.branch) +
                  ", alpha=" + std::to_string(sample.alpha) + ", t=" + std::to_string(sample.t) +
                  ", r=" + std::to_string(sample.r) + "): " + e.what();
    }
  });
  rep.items = items;

  auto reject = [&](std::string reason) {
    rep.skipped = true;
    rep.skip_reason = std::move(reason);
    spdlog::warn("step {} rejected: {}", state.step, rep.skip_reason);
    ++state.skipped;
    ++state.step;
    return rep;
  };
  for (const auto& e : errors) {
    if (!e.empty()) return reject(e);
  }

  double loss = 0.0;
  for (const auto& it : items) loss += it.total;
  rep.loss = loss / static_cast<double>(n);

  ParamStore grad = mean_of(grads);
  if (!grad.all_finite()) return reject("non-finite gradient");
  rep.grad_norm = clip_grad_norm(grad, cfg.clip_norm);
  rep.clipped = rep.grad_norm > cfg.clip_norm;
  state.optimizer.step(state.params, grad, rep.lr);
  state.loss_trace.push_back(rep.loss);
  ++state.step;
  return rep;
}

Checkpoint make_velocity_checkpoint(const UDiTBackbone& model, const TrainState& state, const TrainConfig& cfg,
                                    const StftConfig& stft_cfg) {
  Checkpoint ck;
  ck.groups["params"] = state.params;
  ck.groups["adam.m"] = state.optimizer.first_moment();
  ck.groups["adam.v"] = state.optimizer.second_moment();
  ck.meta = {{"kind", "velocity"},
             {"code_version", code_version()},
             {"path_kind", to_string(cfg.path_kind)},
             {"predictor", model.config()},
             {"stft", stft_cfg},
             {"train", cfg},
             {"state",
              {{"step", state.step},
               {"epoch", state.epoch},
               {"skipped", state.skipped},
               {"adam_t", state.optimizer.steps()}}},
             {"loss_trace", state.loss_trace}};
  return ck;
}

LoadedVelocityModel load_velocity_model(const std::filesystem::path& checkpoint) {
  Checkpoint ck = load_checkpoint(checkpoint);
  if (ck.meta.value("kind", "") != "velocity") {
    throw ValidationError(checkpoint.string() + " is not a velocity-model checkpoint");
  }
  LoadedVelocityModel out;
  out.model = std::make_unique<UDiTBackbone>(ck.meta.at("predictor").get<PredictorConfig>());
  out.stft = ck.meta.at("stft").get<StftConfig>();
  out.path_kind = path_kind_from_string(ck.meta.at("path_kind").get<std::string>());
  auto it = ck.groups.find("params");
  if (it == ck.groups.end()) throw ValidationError(checkpoint.string() + ": missing parameter group");
  if (!it->second.same_layout(out.model->init_params(0))) {
    throw ValidationError(checkpoint.string() + ": parameter layout does not match the recorded predictor config");
  }
  out.params = std::move(it->second);
  return out;
}

TrainResult train(const UDiTBackbone& model, const TrainConfig& cfg, const std::vector<MixtureExample>& train_set,
                  const std::vector<MixtureExample>& val_set, const TrainRunOptions& run) {
  cfg.validate();
  run.stft.validate();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  if (model.channels() != run.stft.channels()) {
    throw ValidationError("train: model expects " + std::to_string(model.channels()) + " channels, STFT gives " +
                          std::to_string(run.stft.channels()));
  }

  std::vector<SpectralExample> spectra(train_set.size());
  parallel_for(train_set.size(), static_cast<std::size_t>(cfg.workers),
               [&](std::size_t i) { spectra[i] = spectral_example(train_set[i], run.stft); });

  TrainState state(model.init_params(cfg.seed), cfg.optimizer);
  json manifest = {{"code_version", code_version()},
                   {"seed", cfg.seed},
                   {"path_kind", to_string(cfg.path_kind)},
                   {"config", run.config_snapshot},
                   {"train", cfg},
                   {"predictor", model.config()},
                   {"stft", run.stft},
                   {"dataset", {{"n_train", train_set.size()}, {"n_val", val_set.size()}}},
                   {"epochs", json::array()},
                   {"resumed", json::array()}};
  std::optional<std::filesystem::path> manifest_path;
  std::ofstream telemetry;
  if (run.out_dir) {
    std::filesystem::create_directories(*run.out_dir);
    manifest_path = *run.out_dir / "run_manifest.json";
    telemetry.open(*run.out_dir / "telemetry.jsonl", run.resume_from ? std::ios::app : std::ios::trunc);
    if (!telemetry) throw IoError("cannot write telemetry in " + run.out_dir->string());
  }

  if (run.resume_from) {
    Checkpoint ck = load_checkpoint(*run.resume_from);
    if (ck.meta.value("kind", "") != "velocity") throw ValidationError("resume: not a velocity checkpoint");
    const ParamStore& p = ck.groups.at("params");
    if (!p.same_layout(state.params)) throw ValidationError("resume: checkpoint layout differs from the model");
    state.params = p;
    const json& st = ck.meta.at("state");
    state.optimizer.restore(ck.groups.at("adam.m"), ck.groups.at("adam.v"), st.at("adam_t").get<long>());
    state.step = st.at("step").get<long>();
    state.epoch = st.at("epoch").get<int>();
    state.skipped = st.at("skipped").get<long>();
    state.loss_trace = ck.meta.at("loss_trace").get<std::vector<double>>();
    if (manifest_path && std::filesystem::exists(*manifest_path)) {
      std::ifstream in(*manifest_path);
      manifest = json::parse(in);
    }
    manifest["resumed"].push_back({{"from", run.resume_from->string()}, {"epoch", state.epoch}});
    spdlog::info("resumed from {} at epoch {} (step {})", run.resume_from->string(), state.epoch, state.step);
  }

  const long spe = cfg.steps_per_epoch(spectra.size());
  const long total_steps = spe * cfg.epochs;
  const auto per_step = static_cast<std::size_t>(cfg.examples_per_step());
  TrainResult result;

  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    if (run.stop_after_epoch > 0 && epoch >= run.stop_after_epoch) break;
    const auto started = std::chrono::steady_clock::now();
    const std::vector<std::size_t> order = epoch_order(spectra.size(), cfg.seed, epoch);
    double loss_sum = 0.0;
    long accepted = 0, fm_count = 0, item_count = 0, skipped_before = state.skipped;
    double last_alpha = 1.0, last_lr = 0.0;

    for (long k = 0; k < spe; ++k) {
      const std::size_t lo = static_cast<std::size_t>(k) * per_step;
      const std::size_t hi = std::min(spectra.size(), lo + per_step);
      std::vector<const SpectralExample*> batch;
      std::vector<std::size_t> ids;
      for (std::size_t j = lo; j < hi; ++j) {
        batch.push_back(&spectra[order[j]]);
        ids.push_back(order[j]);
      }
      const double frac_epoch = epoch + static_cast<double>(k) / static_cast<double>(spe);
      const StepReport rep = train_step(model, cfg, state, batch, ids, total_steps, frac_epoch);
      last_alpha = rep.alpha;
      last_lr = rep.lr;
      if (!rep.skipped) {
        loss_sum += rep.loss;
        ++accepted;
      }
      for (const auto& it : rep.items) {
        fm_count += it.branch == Branch::FlowMatching ? 1 : 0;
        ++item_count;
      }
      if (telemetry.is_open()) {
        for (std::size_t i = 0; i < rep.items.size(); ++i) {
          json rec = breakdown_json(rep.items[i]);
          rec["type"] = "example";
          rec["step"] = rep.step;
          rec["example"] = rep.example_ids[i];
          telemetry << rec.dump() << '\n';
        }
        telemetry << json{{"type", "step"},         {"step", rep.step},         {"epoch", rep.epoch},
                          {"lr", rep.lr},           {"alpha", rep.alpha},       {"loss", rep.loss},
                          {"grad_norm", rep.grad_norm}, {"clipped", rep.clipped}, {"skipped", rep.skipped}}
                         .dump()
                  << '\n';
      }
      if (run.on_step) run.on_step(rep);
    }
    state.epoch = epoch + 1;

    json rec = {{"epoch", state.epoch},
                {"steps", state.step},
                {"mean_loss", accepted > 0 ? loss_sum / static_cast<double>(accepted) : 0.0},
                {"fm_fraction", item_count > 0 ? static_cast<double>(fm_count) / static_cast<double>(item_count) : 0.0},
                {"alpha", last_alpha},
                {"lr", last_lr},
                {"skipped", state.skipped - skipped_before}};
    if (cfg.val_examples > 0 && !val_set.empty()) {
      const Extractor ex{&model, &state.params};
      EvalOptions opts;
      opts.inference.stft = run.stft;
      opts.max_examples = static_cast<std::size_t>(cfg.val_examples);
      opts.workers = static_cast<std::size_t>(cfg.workers);
      const TauChoice tau =
          cfg.path_kind == PathKind::MixtureToTarget ? TauChoice::zero() : TauChoice::oracle();
      const EvalSummary s = evaluate(ex, cfg.path_kind, val_set, tau, "val", opts).summary();
      rec["val_si_sdr"] = s.si_sdr;
      rec["val_si_sdr_improvement"] = s.si_sdr_improvement;
    }
    rec["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    const bool last = state.epoch == cfg.epochs || (run.stop_after_epoch > 0 && state.epoch >= run.stop_after_epoch);
    const bool cadence = cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0;
    if (run.out_dir && (cadence || last)) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch%04d.ckpt", state.epoch);
      const auto path = *run.out_dir / name;
      save_checkpoint(path, make_velocity_checkpoint(model, state, cfg, run.stft));
      rec["checkpoint"] = {{"path", name}, {"digest", file_digest(path)}};
      std::filesystem::copy_file(path, *run.out_dir / "latest.ckpt", std::filesystem::copy_options::overwrite_existing);
      result.last_checkpoint = path;
    }
    spdlog::info("epoch {}/{}: loss {:.5f} alpha {:.3f} fm {:.2f}{} ({:.1f}s)", state.epoch, cfg.epochs,
                 rec["mean_loss"].get<double>(), last_alpha, rec["fm_fraction"].get<double>(),
                 rec.contains("val_si_sdr_improvement")
                     ? fmt::format(" val SI-SDRi {:.2f} dB", rec["val_si_sdr_improvement"].get<double>())
                     : std::string(),
                 rec["seconds"].get<double>());
    manifest["epochs"].push_back(rec);
    if (manifest_path) write_json_atomic(*manifest_path, manifest);
  }

  result.params = state.params;
  result.loss_trace = state.loss_trace;
  result.steps = state.step;
  result.skipped = state.skipped;
  result.epochs_completed = state.epoch;
  result.manifest = manifest;
  return result;
}

// ---------------------------------------------------------------------------

void MrTrainConfig::validate() const {
  if (epochs <= 0) throw ValidationError("mr_train.epochs must be positive");
  if (!(lr > 0.0)) throw ValidationError("mr_train.lr must be positive");
  if (warmup_steps < 0) throw ValidationError("mr_train.warmup_steps must be >= 0");
  if (!(clip_norm > 0.0)) throw ValidationError("mr_train.clip_norm must be positive");
  if (batch_size <= 0 || workers <= 0) throw ValidationError("mr_train: batch_size and workers must be positive");
  optimizer.validate();
}

double mr_loss(const std::vector<double>& predicted, const std::vector<double>& labels) {
  if (predicted.size() != labels.size() || predicted.empty()) {
    throw ValidationError("mr_loss: need equally sized, non-empty inputs");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) sum += (predicted[i] - labels[i]) * (predicted[i] - labels[i]);
  return sum / static_cast<double>(predicted.size());
}

namespace {

void check_labels(const std::vector<MixtureExample>& set, const char* which) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double tau = set[i].tau_star;
    if (!(std::isfinite(tau) && tau > 0.0 && tau < 1.0)) {
      throw ValidationError(std::string("train_mr: ") + which + " example " + std::to_string(i) +
                            " has no valid tau* label");
    }
  }
}

// Moves every row by k bins (towards higher frequencies for k > 0) and fills
// the vacated rows with the feature floor.
void shift_bins(Eigen::MatrixXd& feats, int k) {
  const Eigen::Index n = feats.rows() - std::min<Eigen::Index>(std::abs(k), feats.rows());
  Eigen::MatrixXd out = Eigen::MatrixXd::Constant(feats.rows(), feats.cols(), feats.minCoeff());
  if (k >= 0) {
    out.bottomRows(n) = feats.topRows(n);
  } else {
    out.topRows(n) = feats.bottomRows(n);
  }
  feats = std::move(out);
}

void mask_features(Eigen::MatrixXd& feats, const MrConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) >= cfg.mask_prob) return;
  const double floor_value = feats.minCoeff();
  const auto span = [&](int max_width, Eigen::Index extent) {
    const Eigen::Index w = std::min<Eigen::Index>(
        extent, std::uniform_int_distribution<Eigen::Index>(0, std::max(0, max_width))(rng));
    const Eigen::Index start = std::uniform_int_distribution<Eigen::Index>(0, extent - w)(rng);
    return std::pair{start, w};
  };
  const auto [t0, tw] = span(cfg.max_mask_frames, feats.cols());
  feats.middleCols(t0, tw).setConstant(floor_value);
  const auto [f0, fw] = span(cfg.max_mask_bins, feats.rows());
  feats.middleRows(f0, fw).setConstant(floor_value);
}

}  // namespace

Checkpoint make_mr_checkpoint(const MrRegressor& model, const ParamStore& params) {
  Checkpoint ck;
  ck.groups["mr"] = params;
  ck.meta = {{"kind", "mr"}, {"code_version", code_version()}, {"mr", model.config()}};
  return ck;
}

LoadedMrModel load_mr_model(const std::filesystem::path& checkpoint) {
  Checkpoint ck = load_checkpoint(checkpoint);
  if (ck.meta.value("kind", "") != "mr") throw ValidationError(checkpoint.string() + " is not an MR checkpoint");
  LoadedMrModel out;
  out.model = std::make_unique<MrRegressor>(ck.meta.at("mr").get<MrConfig>());
  auto it = ck.groups.find("mr");
  if (it == ck.groups.end() || !it->second.same_layout(out.model->init_params(0))) {
    throw ValidationError(checkpoint.string() + ": MR parameter layout mismatch");
  }
  out.params = std::move(it->second);
  return out;
}

MrTrainResult train_mr(const MrRegressor& model, const MrTrainConfig& cfg, const std::vector<MixtureExample>& train_set,
                       const std::vector<MixtureExample>& val_set, const std::optional<std::filesystem::path>& out_dir,
                       const json& config_snapshot) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("train_mr: empty training set");
  check_labels(train_set, "training");
  check_labels(val_set, "validation");

  const auto workers = static_cast<std::size_t>(cfg.workers);
  std::vector<Eigen::MatrixXd> mix_feats(train_set.size()), enroll_feats(train_set.size());
  parallel_for(train_set.size(), workers, [&](std::size_t i) {
    mix_feats[i] = model.features(train_set[i].mixture);
    enroll_feats[i] = model.features(train_set[i].enrollment);
  });

  ParamStore params = model.init_params(cfg.seed);
  AdamW opt(cfg.optimizer, params);
  const auto per = static_cast<std::size_t>(cfg.batch_size);
  const long spe = static_cast<long>((train_set.size() + per - 1) / per);
  const long total = spe * cfg.epochs;
  MrTrainResult result;
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(train_set.size(), cfg.seed, epoch);
    double epoch_loss = 0.0;
    for (long k = 0; k < spe; ++k, ++step) {
      const std::size_t lo = static_cast<std::size_t>(k) * per;
      const std::size_t hi = std::min(train_set.size(), lo + per);
      std::vector<GradientResult> grads(hi - lo);
      parallel_for(hi - lo, workers, [&](std::size_t j) {
        const std::size_t id = order[lo + j];
        Eigen::MatrixXd feats = mix_feats[id];
        Eigen::MatrixXd efeats = enroll_feats[id];
        Rng rng = example_rng(cfg.seed, static_cast<std::uint64_t>(step), id);
        if (model.config().max_shift_bins > 0) {
          const int k = std::uniform_int_distribution<int>(-model.config().max_shift_bins,
                                                           model.config().max_shift_bins)(rng);
          shift_bins(feats, k);
          shift_bins(efeats, k);
        }
        if (model.config().mask_prob > 0.0) {
          mask_features(feats, model.config(), rng);
        }
        const double label = train_set[id].tau_star;
        grads[j] = gradient(params, [&](ad::Tape& tape, const BoundParams& bound) {
          const ad::Var pred = ad::sigmoid(model.logit(tape, bound, feats, efeats));
          return ad::mean_square(ad::add_const(pred, Eigen::MatrixXd::Constant(1, 1, -label)));
        });
      });
      double loss = 0.0;
      for (const auto& g : grads) loss += g.loss;
      loss /= static_cast<double>(grads.size());
      ParamStore grad = mean_of(grads);
      clip_grad_norm(grad, cfg.clip_norm);
      opt.step(params, grad, warmup_cosine(cfg.lr, cfg.warmup_steps, step, total));
      result.loss_trace.push_back(loss);
      epoch_loss += loss;
    }
    spdlog::info("mr epoch {}/{}: loss {:.6f}", epoch + 1, cfg.epochs, epoch_loss / static_cast<double>(spe));
  }

  std::vector<double> preds(val_set.size()), labels(val_set.size());
  parallel_for(val_set.size(), workers, [&](std::size_t i) {
    preds[i] = mr_predict(model, params, val_set[i].mixture, val_set[i].enrollment);
    labels[i] = val_set[i].tau_star;
  });
  if (!val_set.empty()) {
    double mae = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) mae += std::abs(preds[i] - labels[i]);
    result.val_mae = mae / static_cast<double>(preds.size());
    result.val_mse = mr_loss(preds, labels);
  }
  result.params = params;
  result.manifest = {{"code_version", code_version()}, {"seed", cfg.seed},          {"config", config_snapshot},
                     {"mr", model.config()},           {"mr_train", cfg},           {"steps", step},
                     {"n_train", train_set.size()},    {"n_val", val_set.size()},   {"val_mae", result.val_mae},
                     {"val_mse", result.val_mse}};
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    const auto path = *out_dir / "mr.ckpt";
    save_checkpoint(path, make_mr_checkpoint(model, params));
    result.manifest["checkpoint"] = {{"path", "mr.ckpt"}, {"digest", file_digest(path)}};
    write_json_atomic(*out_dir / "mr_manifest.json", result.manifest);
  }
  spdlog::info("mr validation: MAE {:.4f}, MSE {:.6f}", result.val_mae, result.val_mse);
  return result;
}

}  // namespace aftse

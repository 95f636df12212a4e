#pragma once

// Training loops: the two-branch AlphaFlow objective for the velocity
// model and squared-error regression for the mixing-ratio regressor.

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aftse/objective.hpp"
#include "aftse/synth_data.hpp"

namespace aftse {

/// Version string baked in at build time (project version plus git revision when available).
const char* code_version();

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

struct TrainConfig {
  int epochs = 150;
  double lr_init = 2e-5;
  long warmup_steps = 1000;
  double clip_norm = 0.5;
  int batch_size = 8;
  int grad_accum_steps = 1;
  std::uint64_t seed = 0;
  int workers = 1;
  int checkpoint_every = 1;  ///< epochs between checkpoints; 0 keeps only the final one
  int val_examples = 32;     ///< held-out examples scored after every epoch (0 disables)
  PathKind path_kind = PathKind::MixtureToTarget;
  ObjectiveConfig objective;
  AlphaSchedule schedule;
  TimeSamplerConfig sampler;
  OptimizerConfig optimizer;

  void validate() const;
  /// Examples consumed by one optimizer update.
  int examples_per_step() const { return batch_size * grad_accum_steps; }
  long steps_per_epoch(std::size_t n_examples) const;
};

/// Linear warmup from 0 to lr_init over warmup_steps, then cosine decay to 0
/// at total_steps. Continuous at the junction.
double lr_at(const TrainConfig& cfg, long step, long total_steps);

/// Decoupled-weight-decay Adam.
class AdamW {
 public:
  AdamW(OptimizerConfig cfg, const ParamStore& like);

  void step(ParamStore& params, const ParamStore& grad, double lr);

  long steps() const { return t_; }
  const ParamStore& first_moment() const { return m_; }
  const ParamStore& second_moment() const { return v_; }
  void restore(ParamStore m, ParamStore v, long t);

 private:
  OptimizerConfig cfg_;
  ParamStore m_, v_;
  long t_ = 0;
};

/// Rescales `grad` in place so its global norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParamStore& grad, double max_norm);

/// STFT of every role of a mixture example.
SpectralExample spectral_example(const MixtureExample& ex, const StftConfig& stft_cfg);

struct TrainState {
  ParamStore params;
  AdamW optimizer;
  long step = 0;   ///< optimizer updates taken (including rejected steps)
  int epoch = 0;   ///< completed epochs
  long skipped = 0;
  std::vector<double> loss_trace;  ///< mean loss of every accepted step

  TrainState(ParamStore p, const OptimizerConfig& opt) : params(std::move(p)), optimizer(opt, params) {}
};

struct StepReport {
  long step = 0;
  double epoch = 0.0;  ///< fractional epoch used for the alpha schedule
  double lr = 0.0;
  double alpha = 1.0;
  double loss = 0.0;  ///< mean lambda-scaled loss over the batch
  double grad_norm = 0.0;
  bool clipped = false;
  bool skipped = false;
  std::string skip_reason;
  std::vector<LossBreakdown> items;
  std::vector<std::size_t> example_ids;
};

/// One optimizer update over `batch` (batch_size * grad_accum_steps examples,
/// or fewer at the end of an epoch). Each example draws its own branch and
/// interval from a stream seeded by (seed, step, example id); the gradient is
/// the mean over examples, reduced in batch order. A non-finite loss or
/// gradient rejects the whole step (no update) and bumps the skip counter.
StepReport train_step(const VelocityModel& model, const TrainConfig& cfg, TrainState& state,
                      const std::vector<const SpectralExample*>& batch, const std::vector<std::size_t>& example_ids,
                      long total_steps, double epoch);

struct TrainRunOptions {
  std::optional<std::filesystem::path> out_dir;      ///< checkpoints, telemetry, manifest
  std::optional<std::filesystem::path> resume_from;  ///< checkpoint to continue from
  int stop_after_epoch = 0;  ///< stop once this many epochs are complete (0 = run all)
  StftConfig stft = StftConfig::desk();
  nlohmann::json config_snapshot = nlohmann::json::object();
  std::function<void(const StepReport&)> on_step;
};

struct TrainResult {
  ParamStore params;
  std::vector<double> loss_trace;
  long steps = 0;
  long skipped = 0;
  int epochs_completed = 0;
  nlohmann::json manifest;
  std::optional<std::filesystem::path> last_checkpoint;
};

/// Full training run. Deterministic for a fixed seed regardless of the
/// worker count.
TrainResult train(const UDiTBackbone& model, const TrainConfig& cfg, const std::vector<MixtureExample>& train_set,
                  const std::vector<MixtureExample>& val_set, const TrainRunOptions& run);

/// Checkpoint for a velocity model: parameters, optimizer moments and the
/// metadata needed to rebuild the model for inference.
Checkpoint make_velocity_checkpoint(const UDiTBackbone& model, const TrainState& state, const TrainConfig& cfg,
                                    const StftConfig& stft_cfg);

struct LoadedVelocityModel {
  std::unique_ptr<UDiTBackbone> model;
  ParamStore params;
  StftConfig stft;
  PathKind path_kind = PathKind::MixtureToTarget;
};

LoadedVelocityModel load_velocity_model(const std::filesystem::path& checkpoint);

// --- Mixing-ratio regressor -------------------------------------------------

struct MrTrainConfig {
  int epochs = 30;
  double lr = 1e-3;
  long warmup_steps = 50;
  double clip_norm = 1.0;
  int batch_size = 16;
  std::uint64_t seed = 0;
  int workers = 1;
  OptimizerConfig optimizer;

  void validate() const;
};

/// Mean squared error between predicted and true ratios.
double mr_loss(const std::vector<double>& predicted, const std::vector<double>& labels);

struct MrTrainResult {
  ParamStore params;
  std::vector<double> loss_trace;
  double val_mae = 0.0;
  double val_mse = 0.0;
  nlohmann::json manifest;
};

MrTrainResult train_mr(const MrRegressor& model, const MrTrainConfig& cfg, const std::vector<MixtureExample>& train_set,
                       const std::vector<MixtureExample>& val_set,
                       const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                       const nlohmann::json& config_snapshot = nlohmann::json::object());

struct LoadedMrModel {
  std::unique_ptr<MrRegressor> model;
  ParamStore params;
};

Checkpoint make_mr_checkpoint(const MrRegressor& model, const ParamStore& params);
LoadedMrModel load_mr_model(const std::filesystem::path& checkpoint);

}  // namespace aftse

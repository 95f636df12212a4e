#pragma once

// Repository-wide configuration: one JSON document with a preset name and
// per-section overrides. The `paper` preset holds the published training
// setting; `desk` overrides it with CPU-scale values. Unknown keys and type
// mismatches are rejected with their full key path.
//
//   {
//     "preset": "desk",
//     "seed": 7,
//     "train": {"epochs": 4},
//     "predictor": {"width": 32}
//   }

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aftse/inference.hpp"
#include "aftse/training.hpp"

namespace aftse {

struct EvalConfig {
  std::size_t max_examples = 0;  ///< 0 = whole split
  int workers = 1;
  std::vector<double> tau_offsets{-0.3, -0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2, 0.3};
};

struct RepoConfig {
  std::string preset = "paper";
  std::uint64_t seed = 0;
  StftConfig stft;
  SynthConfig data;
  PredictorConfig predictor;
  TrainConfig train;
  MrConfig mr;
  MrTrainConfig mr_train;
  InferenceConfig inference;
  EvalConfig eval;

  /// Per-section checks plus cross-section consistency
  /// (predictor channels == 2F of the STFT, MR sample-rate compatibility).
  void validate() const;
};

/// Preset by name: "paper" or "desk".
RepoConfig preset_config(const std::string& name);

nlohmann::json config_to_json(const RepoConfig& cfg);
/// Applies `doc` on top of the preset it names (default "paper").
RepoConfig config_from_json(const nlohmann::json& doc);
RepoConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RepoConfig& cfg);

/// Value of AFTSE_CONFIG, if set.
std::optional<std::filesystem::path> default_config_path();

// Serializers for the individual sections (used in checkpoints and manifests).
void to_json(nlohmann::json& j, const StftConfig& c);
void from_json(const nlohmann::json& j, StftConfig& c);
void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);
void to_json(nlohmann::json& j, const PredictorConfig& c);
void from_json(const nlohmann::json& j, PredictorConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const MrConfig& c);
void from_json(const nlohmann::json& j, MrConfig& c);
void to_json(nlohmann::json& j, const MrTrainConfig& c);
void from_json(const nlohmann::json& j, MrTrainConfig& c);
void to_json(nlohmann::json& j, const InferenceConfig& c);
void from_json(const nlohmann::json& j, InferenceConfig& c);
void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

PathKind path_kind_from_string(const std::string& s);

}  // namespace aftse

#pragma once

// Run configuration: one JSON document with a section per concern. Every
// section and key is optional except `seed`; unknown keys are rejected with
// the full dotted key name so typos do not silently fall back to defaults.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "scenemaker/deocc.hpp"
#include "scenemaker/layout.hpp"
#include "scenemaker/metrics.hpp"
#include "scenemaker/pose_dit.hpp"

namespace scenemaker {

struct TrainingConfig {
  int steps = 2000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  int warmup_steps = 100;
  // Cosine decay to this fraction of the peak rate.
  double final_lr_fraction = 0.1;
  double grad_clip = 1.0;
  double weight_decay = 0.0;
};

// Point budgets for the condition encoders and for evaluation.
struct ConditioningConfig {
  int geometry_points = 256;
  int local_points = 256;
  int global_points = 1024;
  int eval_points = 2048;
};

struct DeoccConfig {
  int count = 500;
  int image_size = 64;
  StrategyMix mix;
  std::string prompt_template = kDefaultPromptTemplate;
  CoverageBounds bounds;
  bool resize = true;
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::string output_dir = "runs";
  DatasetConfig dataset;
  int eval_scenes = 128;
  DiTConfig model;
  TrainingConfig training;
  ConditioningConfig conditioning;
  MetricSettings metrics;
  DeoccConfig deocc;
};

inline constexpr const char* kSeedEnvVar = "SCENEMAKER_SEED";

// Throws ConfigError naming the offending key.
RunConfig parse_run_config(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& config);

// Reads the file (FormatError on I/O or syntax problems), parses it and
// applies the seed environment override.
RunConfig load_run_config(const std::filesystem::path& path);

// Defaults plus the seed environment override.
RunConfig default_run_config();

// "training.steps=500" style override; the value is parsed as JSON and
// falls back to a plain string.
void apply_override(RunConfig& config, const std::string& assignment);

// Applies SCENEMAKER_SEED when set; throws ConfigError when it is not an
// unsigned integer.
void apply_seed_env(RunConfig& config);

// The model settings with the run seed folded in.
DiTConfig model_config(const RunConfig& config);

nlohmann::json to_json(const DiTConfig& config);
DiTConfig dit_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const DatasetConfig& config);

}  // namespace scenemaker

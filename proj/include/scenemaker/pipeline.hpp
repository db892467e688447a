#pragma once

// Glue between datasets, the pose model and the metrics: condition
// preparation, training and evaluation runs, the random-pose baseline and
// the ablation experiment.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "scenemaker/config.hpp"
#include "scenemaker/io.hpp"
#include "scenemaker/layout.hpp"
#include "scenemaker/metrics.hpp"
#include "scenemaker/pose_dit.hpp"
#include "scenemaker/trainer.hpp"

namespace scenemaker {

// Seed of scene `index` in a split. The "train" split matches
// generate_dataset.
std::uint64_t scene_seed(std::uint64_t seed, const std::string& split, int index);

// Uniform subsample without replacement; the whole cloud when it is small
// enough. Relative order is preserved.
PointCloud subsample(const PointCloud& cloud, int count, std::uint64_t seed);

// What the model sees of a scene, plus what evaluation needs.
struct PreparedScene {
  std::string scene_id;
  ConditionInput input;
  nn::Matrix<float> target;        // ground-truth x1 rows in the observation frame
  SceneNormalization observation;  // frame fitted on the observed points
  SceneNormalization truth_frame;  // evaluation frame (fitted on the posed geometry)
  std::vector<Pose> truth;         // scene coordinates
  std::vector<PointCloud> eval_canonical;
  Aabb observed_box;               // scene coordinates
  // Set when nothing was visible and the truth frame stood in.
  bool observation_fallback = false;
};

// With `complete_points` the conditions use the full posed clouds instead of
// the visible points.
PreparedScene prepare_scene(const SceneSample& scene, const ConditioningConfig& config, bool complete_points);

struct PreparedSplit {
  std::vector<PreparedScene> partial;
  std::vector<PreparedScene> complete;  // empty unless requested
  std::string fingerprint;
};

// Generates `count` scenes of `split` in memory and prepares
// them one by one, so full-resolution clouds never accumulate.
PreparedSplit synthesize_split(const DatasetConfig& dataset, const ConditioningConfig& conditioning, std::uint64_t seed,
                               const std::string& split, int count, bool with_complete);

// Generates `count` scenes of `split` into `dir` (one directory per scene
// plus dataset.json). Output is byte-identical for equal arguments.
DatasetInfo write_dataset(const std::filesystem::path& dir, const DatasetConfig& dataset, std::uint64_t seed,
                          const std::string& split, int count);

// Reads a dataset directory and prepares every scene, one at a time.
std::vector<PreparedScene> load_prepared(const std::filesystem::path& dir, const ConditioningConfig& conditioning,
                                         bool complete_points, DatasetInfo* info = nullptr);

std::vector<TrainSample> train_samples(std::span<const PreparedScene> scenes);

// Scene-coordinate poses from the model, with sampling flags.
ScenePrediction predict_scene(const PoseDiT<float>& model, const PreparedScene& scene, std::uint64_t seed, int steps = 0);

struct SizeRange {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());
};

SizeRange training_size_range(std::span<const PreparedScene> scenes);
std::vector<Pose> baseline_poses(const PreparedScene& scene, const SizeRange& sizes, std::uint64_t seed);

MetricsReport evaluate_prepared(const PreparedScene& scene, std::span<const Pose> predicted, const MetricSettings& settings,
                                bool boxes_only);

struct EvaluationRun {
  MetricsReport mean;
  std::vector<MetricsReport> scenes;
  std::map<std::string, ScenePrediction> predictions;
};

EvaluationRun evaluate_model(const PoseDiT<float>& model, std::span<const PreparedScene> scenes, std::uint64_t seed,
                             const MetricSettings& settings, bool boxes_only, int steps = 0);
EvaluationRun evaluate_baseline(std::span<const PreparedScene> scenes, const SizeRange& sizes, std::uint64_t seed,
                                const MetricSettings& settings, bool boxes_only);

struct VariantSpec {
  std::string name;
  AblationFlags flags;
  bool complete_points = false;
};

// Full model, w/o GSA, w/o LSA, w/o LCA, + complete points.
std::vector<VariantSpec> ablation_variants();

struct VariantResult {
  VariantSpec spec;
  MetricsReport metrics;
  TrainResult training;
};

struct ExperimentReport {
  nlohmann::json config;
  std::string dataset_fingerprint;
  std::vector<VariantResult> rows;
  MetricsReport baseline;
  std::map<std::string, std::uint64_t> seeds;
  double wall_clock_seconds = 0;
};

using Progress = std::function<void(const std::string& message)>;

// Trains a fresh model for `spec` on the matching prepared split.
PoseDiT<float> train_variant(const RunConfig& config, const VariantSpec& spec, std::span<const PreparedScene> train,
                             TrainResult* result, const TrainProgress& progress = {});

ExperimentReport run_ablation(const RunConfig& config, const PreparedSplit& train, const PreparedSplit& eval,
                              bool boxes_only, const Progress& progress = {});

nlohmann::json to_json(const ExperimentReport& report);
ExperimentReport experiment_from_json(const nlohmann::json& doc);
std::string render_markdown(const ExperimentReport& report);

}  // namespace scenemaker

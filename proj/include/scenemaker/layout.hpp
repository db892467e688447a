#pragma once

// Procedural scene synthesis: primitive objects placed on a common ground
// plane without box overlap, a random elevated camera, and simulated
// perception (per-object visible points through a z-buffer).

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scenemaker/geometry.hpp"
#include "scenemaker/kernels.hpp"
#include "scenemaker/shapes.hpp"

namespace scenemaker {

struct LayoutConfig {
  int max_objects = 8;
  // x-y translation range, scene units before normalization.
  double xy_min = -0.8;
  double xy_max = 0.8;
  // Base isotropic size and the relative per-axis jitter applied on top.
  double size_min = 0.25;
  double size_max = 0.5;
  double size_jitter = 0.2;
  // Pitch perturbation is uniform in [-pitch_range_deg, pitch_range_deg].
  double pitch_range_deg = 15.0;
  int rejection_budget = 1000;
};

struct CameraConfig {
  double elevation_min_deg = 15.0;
  double elevation_max_deg = 60.0;
  double radius_min = 2.5;
  double radius_max = 3.5;
  Vec3 look_at = Vec3(0.0, 0.0, 0.15);
  int resolution = 256;
  double fov_deg = 45.0;
};

struct RenderConfig {
  double depth_tolerance = 0.03;
  // Gaussian sigma applied to visible points along the viewing ray.
  double depth_noise = 0.0;
};

struct CameraSpec {
  double elevation_deg = 30.0;
  double azimuth_deg = 0.0;
  double radius = 3.0;
  Vec3 look_at = Vec3::Zero();
  int resolution = 256;
  double fov_deg = 45.0;

  Vec3 eye() const;
  kernels::PinholeCamera pinhole() const;
};

struct ObjectAugmentation {
  double yaw_deg = 0.0;
  double pitch_deg = 0.0;
};

struct Layout {
  std::vector<Pose> poses;
  std::vector<ObjectAugmentation> augmentation;
  int attempts = 0;
};

struct RenderResult {
  std::vector<PointCloud> partial;
  std::vector<double> visibility;
  std::vector<bool> occluded;
  std::vector<std::int32_t> pixel_owner;
  std::size_t visible_total = 0;
};

struct ObjectSample {
  ShapeSpec shape;
  PointCloud canonical;
  Pose pose;
  ObjectAugmentation augmentation;
  PointCloud partial;                            // scene frame
  std::optional<PointCloud> partial_normalized;  // nothing when fully occluded
  double visibility = 0.0;
  bool occluded = false;
};

struct SceneSample {
  std::string scene_id;
  std::uint64_t seed = 0;
  std::vector<ObjectSample> objects;
  CameraSpec camera;
  // Fitted on the posed canonical geometry.
  SceneNormalization normalization;

  ComposedScene composed() const;
  std::vector<Pose> poses() const;
};

struct DatasetConfig {
  int scenes = 1024;
  int min_objects = 2;
  int max_objects = 5;
  int points_per_object = 20000;
  ShapeDistribution shape_weights = kUniformShapes;
  LayoutConfig layout;
  CameraConfig camera;
  RenderConfig render;
};

// Throws ConfigError on inconsistent settings.
void validate(const DatasetConfig& config);

// Random yaw and pitch, sizes, grounding (min posed z = 0) and rejection
// sampling of x-y positions until no two posed boxes overlap. Throws
// LayoutInfeasibleError once `rejection_budget` placements have failed.
Layout sample_layout(std::uint64_t seed, std::span<const PointCloud> canonical, const LayoutConfig& config = {});

CameraSpec sample_camera(std::uint64_t seed, const CameraConfig& config = {});

// Throws ConfigError for resolutions below 16.
RenderResult render_partial(std::span<const PointCloud> posed, const CameraSpec& camera,
                            const RenderConfig& config = {}, std::uint64_t noise_seed = 0);

// Centred on the centroid and scaled into [-1,1]^3. Empty input yields
// nothing (the empty-condition marker).
std::optional<PointCloud> normalize_object_partial(const PointCloud& partial);

SceneSample generate_scene(const DatasetConfig& config, std::uint64_t scene_seed, const std::string& scene_id);

// Scene i is generated from derive_seed(seed, "dataset/scene/<i>"), so the
// dataset is reproducible and scenes can be built in any order.
std::vector<SceneSample> generate_dataset(const DatasetConfig& config, std::uint64_t seed);

std::string scene_name(int index);

// Validators used by tests and the dataset writer.
bool is_grounded(const SceneSample& scene, double tol = 1e-6);
bool is_non_intersecting(const SceneSample& scene);

}  // namespace scenemaker

#pragma once

// Scene and object reconstruction metrics. Undefined values (empty inputs,
// zero-volume boxes) come back as std::nullopt.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scenemaker/geometry.hpp"

namespace scenemaker {

struct MetricSettings {
  double fscore_tau = 0.1;
  int voxel_resolution = 64;
};

// Mean squared nearest-neighbour distance from a to b plus the same from b
// to a.
std::optional<double> chamfer(const PointCloud& a, const PointCloud& b);

// Harmonic mean of precision (share of a within tau of b) and recall (share
// of b within tau of a); 0 when both are 0.
std::optional<double> fscore(const PointCloud& a, const PointCloud& b, double tau);

// IoU of column-filled voxel occupancy over the joint bounding box.
std::optional<double> volume_iou(const PointCloud& a, const PointCloud& b, int resolution);

struct ObjectMetrics {
  std::optional<double> chamfer;
  std::optional<double> fscore;
  std::optional<double> iou_b;
  std::optional<double> volume_iou;
};

struct MetricsReport {
  std::optional<double> cd_s, fscore_s, cd_o, fscore_o, iou_b, volume_iou;
  std::vector<ObjectMetrics> objects;
  double fscore_tau = 0.1;
  int voxel_resolution = 64;
  std::string box_convention = "axis-aligned";
};

// Poses are in scene coordinates; everything is measured after mapping into
// `frame` (the ground-truth scene normalization). Objects correspond by
// index. Throws ConfigError on count mismatch.
MetricsReport evaluate_scene(std::span<const PointCloud> canonical, std::span<const Pose> predicted,
                             std::span<const Pose> truth, const SceneNormalization& frame,
                             const MetricSettings& settings = {});

// Cheaper variant that only fills iou_b (and its per-object values).
MetricsReport evaluate_boxes(std::span<const PointCloud> canonical, std::span<const Pose> predicted,
                             std::span<const Pose> truth, const SceneNormalization& frame);

// Mean of every defined field across reports; per-object lists are dropped.
MetricsReport mean_report(std::span<const MetricsReport> reports);

struct BaselineRange {
  Aabb translation;           // uniform placement box
  Vec3 size_min, size_max;    // per-axis uniform size range
};

// Uniform yaw, translation and size inside the given ranges.
std::vector<Pose> random_pose_baseline(std::uint64_t seed, int objects, const BaselineRange& range);

}  // namespace scenemaker

#pragma once

// Shared geometric vocabulary: rotations, poses, boxes, point clouds, scene
// normalization and composition. Everything here is a pure function.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace scenemaker {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using PointCloud = std::vector<Vec3>;

// Two 3-vectors that orthonormalize into the first two columns of a rotation.
struct Rotation6D {
  Vec3 a1 = Vec3::UnitX();
  Vec3 a2 = Vec3::UnitY();
};

// Rotation, translation and per-axis size that place a canonical object
// (normalized to the unit cube about the origin) in the scene frame.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  Vec3 size = Vec3::Ones();

  static Pose identity() { return {}; }
};

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  double volume() const;
  Aabb merged(const Aabb& other) const;
};

struct IouResult {
  double value = 0.0;
  // Set when the union volume is zero and the IoU is reported as 0.
  bool degenerate = false;
};

// Maps scene coordinates into the unified frame: p' = (p - center) / scale.
struct SceneNormalization {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;

  Vec3 to_normalized(const Vec3& p) const { return (p - center) / scale; }
  Vec3 from_normalized(const Vec3& p) const { return p * scale + center; }
  Pose to_normalized(const Pose& pose) const;
  Pose from_normalized(const Pose& pose) const;
};

struct PosedObject {
  const PointCloud* cloud = nullptr;
  Pose pose;
};

struct NormalizedScene {
  std::vector<Pose> poses;
  SceneNormalization normalization;
};

struct ComposedScene {
  PointCloud points;
  // Index of the source object of every point.
  std::vector<std::uint32_t> owner;
};

// Gram-Schmidt: b1 = a1/|a1|, b2 = normalize(a2 - (b1.a2) b1), b3 = b1 x b2.
// Throws DegenerateRotationError for near-zero or parallel inputs.
Mat3 rot6d_to_matrix(const Rotation6D& r);
Rotation6D matrix_to_rot6d(const Mat3& m);

bool is_rotation(const Mat3& m, double tol = 1e-6);

Mat3 rotation_z(double radians);
Mat3 rotation_y(double radians);

// R * (s .* x) + t
Vec3 apply_pose(const Pose& pose, const Vec3& x);
PointCloud apply_pose(const Pose& pose, const PointCloud& cloud);

// Throws DegenerateGeometryError on an empty cloud.
Aabb aabb_of(const PointCloud& cloud);
// Strict overlap on all three axes; touching faces do not intersect.
bool aabb_intersects(const Aabb& a, const Aabb& b);
IouResult aabb_iou_3d(const Aabb& a, const Aabb& b);

// Centroid of the cloud and the half-width of the smallest centroid-centred
// cube containing it. Throws DegenerateGeometryError on empty or zero-extent
// input.
SceneNormalization fit_normalization(const PointCloud& points);

// Centroid of all posed points; scale so every posed point lands in [-1,1]^3.
NormalizedScene normalize_scene(std::span<const PosedObject> objects);

// Throws ConfigError when the lists differ in length or are empty.
ComposedScene compose_scene(std::span<const PointCloud> objects, std::span<const Pose> poses);

Vec3 centroid(const PointCloud& cloud);

}  // namespace scenemaker

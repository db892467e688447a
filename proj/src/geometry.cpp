#include "scenemaker/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "scenemaker/errors.hpp"

namespace scenemaker {

namespace {
constexpr double kDegenerateEps = 1e-8;
}

double Aabb::volume() const {
  const Vec3 e = extent().cwiseMax(0.0);
  return e.x() * e.y() * e.z();
}

Aabb Aabb::merged(const Aabb& other) const { return {min.cwiseMin(other.min), max.cwiseMax(other.max)}; }

Pose SceneNormalization::to_normalized(const Pose& pose) const {
  return {pose.rotation, to_normalized(pose.translation), pose.size / scale};
}

Pose SceneNormalization::from_normalized(const Pose& pose) const {
  return {pose.rotation, from_normalized(pose.translation), pose.size * scale};
}

Mat3 rot6d_to_matrix(const Rotation6D& r) {
  const double n1 = r.a1.norm();
  if (!(n1 > kDegenerateEps) || !std::isfinite(n1)) throw DegenerateRotationError("6D rotation: first column has near-zero norm");
  if (!(r.a2.norm() > kDegenerateEps)) throw DegenerateRotationError("6D rotation: second column has near-zero norm");
  const Vec3 b1 = r.a1 / n1;
  if (!(b1.cross(r.a2).norm() > kDegenerateEps)) throw DegenerateRotationError("6D rotation: columns are parallel");
  const Vec3 u2 = r.a2 - b1.dot(r.a2) * b1;
  const double n2 = u2.norm();
  if (!(n2 > kDegenerateEps)) throw DegenerateRotationError("6D rotation: columns are parallel");
  const Vec3 b2 = u2 / n2;
  Mat3 m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return m;
}

Rotation6D matrix_to_rot6d(const Mat3& m) { return {m.col(0), m.col(1)}; }

bool is_rotation(const Mat3& m, double tol) {
  if (!m.allFinite()) return false;
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(m.determinant() - 1.0) <= tol;
}

Mat3 rotation_z(double radians) { return Eigen::AngleAxisd(radians, Vec3::UnitZ()).toRotationMatrix(); }

Mat3 rotation_y(double radians) { return Eigen::AngleAxisd(radians, Vec3::UnitY()).toRotationMatrix(); }

Vec3 apply_pose(const Pose& pose, const Vec3& x) { return pose.rotation * pose.size.cwiseProduct(x) + pose.translation; }

PointCloud apply_pose(const Pose& pose, const PointCloud& cloud) {
  PointCloud out;
  out.reserve(cloud.size());
  for (const Vec3& x : cloud) out.push_back(apply_pose(pose, x));
  return out;
}

Aabb aabb_of(const PointCloud& cloud) {
  if (cloud.empty()) throw DegenerateGeometryError("bounding box of an empty point cloud");
  Aabb box{cloud.front(), cloud.front()};
  for (const Vec3& p : cloud) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

bool aabb_intersects(const Aabb& a, const Aabb& b) {
  for (int k = 0; k < 3; ++k) {
    if (!(a.min[k] < b.max[k] && b.min[k] < a.max[k])) return false;
  }
  return true;
}

IouResult aabb_iou_3d(const Aabb& a, const Aabb& b) {
  const Vec3 lo = a.min.cwiseMax(b.min);
  const Vec3 hi = a.max.cwiseMin(b.max);
  const Vec3 overlap = (hi - lo).cwiseMax(0.0);
  const double inter = overlap.x() * overlap.y() * overlap.z();
  const double uni = a.volume() + b.volume() - inter;
  if (!(uni > 0.0)) return {0.0, true};
  // Identical boxes give exactly 1.
  if (a.min == b.min && a.max == b.max) return {1.0, false};
  return {std::clamp(inter / uni, 0.0, 1.0), false};
}

Vec3 centroid(const PointCloud& cloud) {
  if (cloud.empty()) throw DegenerateGeometryError("centroid of an empty point cloud");
  Vec3 sum = Vec3::Zero();
  for (const Vec3& p : cloud) sum += p;
  return sum / static_cast<double>(cloud.size());
}

SceneNormalization fit_normalization(const PointCloud& points) {
  const Vec3 c = centroid(points);
  double reach = 0.0;
  for (const Vec3& p : points) reach = std::max(reach, (p - c).cwiseAbs().maxCoeff());
  if (!(reach > 1e-12)) throw DegenerateGeometryError("scene normalization: point set has zero extent");
  return {c, reach};
}

NormalizedScene normalize_scene(std::span<const PosedObject> objects) {
  if (objects.empty()) throw DegenerateGeometryError("scene normalization needs at least one object");
  PointCloud all;
  for (const PosedObject& o : objects) {
    for (const Vec3& x : *o.cloud) all.push_back(apply_pose(o.pose, x));
  }
  NormalizedScene out;
  out.normalization = fit_normalization(all);
  out.poses.reserve(objects.size());
  for (const PosedObject& o : objects) out.poses.push_back(out.normalization.to_normalized(o.pose));
  return out;
}

ComposedScene compose_scene(std::span<const PointCloud> objects, std::span<const Pose> poses) {
  if (objects.size() != poses.size()) throw ConfigError("compose_scene: object and pose lists differ in length");
  if (objects.empty()) throw ConfigError("compose_scene: no objects");
  ComposedScene scene;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    for (const Vec3& x : objects[i]) {
      scene.points.push_back(apply_pose(poses[i], x));
      scene.owner.push_back(static_cast<std::uint32_t>(i));
    }
  }
  return scene;
}

}  // namespace scenemaker

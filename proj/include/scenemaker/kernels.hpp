#pragma once

// Data-parallel hot loops. Every OpenMP kernel has a serial reference with
// the same signature; the two must agree bit for bit (tests/test_kernels.cpp,
// bench/bench_kernels.cpp).

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "scenemaker/geometry.hpp"

namespace scenemaker::kernels {

// Pinhole camera looking along `forward`; pixel (0,0) is the top-left corner.
struct PinholeCamera {
  Vec3 position = Vec3::Zero();
  Vec3 forward = Vec3::UnitX();
  Vec3 right = Vec3::UnitY();
  Vec3 up = Vec3::UnitZ();
  double tan_half_fov = 0.5;
  int resolution = 64;

  static PinholeCamera look_at(const Vec3& eye, const Vec3& target, double fov_deg, int resolution);

  struct Hit {
    int pixel;
    double depth;
  };
  // Pixel index and depth of `p`, or nothing when p is behind the camera or
  // off the image.
  std::optional<Hit> project(const Vec3& p) const;
};

struct Visibility {
  // Per input point: 1 when it wins (or ties within tolerance) its pixel.
  std::vector<std::uint8_t> visible;
  // Per pixel: owning object of the nearest point, -1 for empty pixels.
  std::vector<std::int32_t> pixel_owner;
};

// Z-buffer: each pixel is won by its nearest point (ties broken by point
// index). A point is visible iff it belongs to the winner's object and lies
// within `depth_tolerance` of the winner's depth.
Visibility zbuffer_visibility(std::span<const Vec3> points, std::span<const std::uint32_t> owner,
                              const PinholeCamera& camera, double depth_tolerance);
Visibility zbuffer_visibility_serial(std::span<const Vec3> points, std::span<const std::uint32_t> owner,
                                     const PinholeCamera& camera, double depth_tolerance);

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

// Exact nearest-neighbour search over a static point set.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  // Squared distance to the nearest stored point; +inf when empty.
  double nearest_squared(const Vec3& q) const;

 private:
  struct Node {
    std::int32_t begin, end;   // leaf range into order_
    std::int32_t left, right;  // children, -1 for leaves
    int axis;
    double split;
  };
  std::int32_t build(std::int32_t begin, std::int32_t end);
  void search(std::int32_t node, const Vec3& q, double& best) const;

  std::vector<Vec3> points_;
  std::vector<std::int32_t> order_;
  std::vector<Node> nodes_;
};

// For each query point, squared distance to its nearest reference point.
std::vector<double> nearest_squared_distances(std::span<const Vec3> query, std::span<const Vec3> reference);
// O(N*M) reference implementation.
std::vector<double> nearest_squared_distances_serial(std::span<const Vec3> query, std::span<const Vec3> reference);

// Dense occupancy over a box split into resolution^3 cells.
struct VoxelGrid {
  Aabb bounds;
  int resolution = 0;
  std::vector<std::uint8_t> cells;  // index = (x * res + y) * res + z

  std::size_t count() const;
};

// Marks every cell hit by a point, then fills each (x, y) column between its
// lowest and highest occupied cell.
VoxelGrid voxelize_filled(std::span<const Vec3> points, const Aabb& bounds, int resolution);
VoxelGrid voxelize_filled_serial(std::span<const Vec3> points, const Aabb& bounds, int resolution);

}  // namespace scenemaker::kernels

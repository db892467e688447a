#include "scenemaker/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "scenemaker/errors.hpp"

namespace scenemaker::kernels {

PinholeCamera PinholeCamera::look_at(const Vec3& eye, const Vec3& target, double fov_deg, int resolution) {
  PinholeCamera cam;
  cam.position = eye;
  cam.forward = (target - eye).normalized();
  Vec3 world_up = Vec3::UnitZ();
  if (std::abs(cam.forward.dot(world_up)) > 0.999) world_up = Vec3::UnitY();
  cam.right = cam.forward.cross(world_up).normalized();
  cam.up = cam.right.cross(cam.forward);
  cam.tan_half_fov = std::tan(fov_deg * M_PI / 360.0);
  cam.resolution = resolution;
  return cam;
}

std::optional<PinholeCamera::Hit> PinholeCamera::project(const Vec3& p) const {
  const Vec3 d = p - position;
  const double depth = d.dot(forward);
  if (!(depth > 1e-9)) return std::nullopt;
  const double u = d.dot(right) / (depth * tan_half_fov);
  const double v = d.dot(up) / (depth * tan_half_fov);
  const double px = (u + 1.0) * 0.5 * resolution;
  const double py = (1.0 - v) * 0.5 * resolution;
  if (!(px >= 0.0 && px < resolution && py >= 0.0 && py < resolution)) return std::nullopt;
  return Hit{static_cast<int>(py) * resolution + static_cast<int>(px), depth};
}

namespace {

struct Winner {
  double depth = std::numeric_limits<double>::infinity();
  std::int64_t index = -1;

  bool beats(double d, std::int64_t i) const { return index < 0 || d < depth || (d == depth && i < index); }
};

void check_owner(std::span<const Vec3> points, std::span<const std::uint32_t> owner) {
  if (points.size() != owner.size()) throw ConfigError("z-buffer: point and owner arrays differ in length");
}

Visibility resolve(std::span<const Vec3> points, std::span<const std::uint32_t> owner, const PinholeCamera& camera,
                   const std::vector<Winner>& zbuf, double tol, bool parallel) {
  Visibility vis;
  const std::int64_t n = static_cast<std::int64_t>(points.size());
  vis.visible.assign(points.size(), 0);
  vis.pixel_owner.assign(zbuf.size(), -1);
  for (std::size_t px = 0; px < zbuf.size(); ++px) {
    if (zbuf[px].index >= 0) vis.pixel_owner[px] = static_cast<std::int32_t>(owner[static_cast<std::size_t>(zbuf[px].index)]);
  }
#pragma omp parallel for schedule(static) if (parallel)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto hit = camera.project(points[static_cast<std::size_t>(i)]);
    if (!hit) continue;
    const Winner& w = zbuf[static_cast<std::size_t>(hit->pixel)];
    if (static_cast<std::int32_t>(owner[static_cast<std::size_t>(i)]) == vis.pixel_owner[static_cast<std::size_t>(hit->pixel)] &&
        hit->depth <= w.depth + tol) {
      vis.visible[static_cast<std::size_t>(i)] = 1;
    }
  }
  return vis;
}

}  // namespace

Visibility zbuffer_visibility_serial(std::span<const Vec3> points, std::span<const std::uint32_t> owner,
                                     const PinholeCamera& camera, double depth_tolerance) {
  check_owner(points, owner);
  std::vector<Winner> zbuf(static_cast<std::size_t>(camera.resolution) * camera.resolution);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto hit = camera.project(points[i]);
    if (!hit) continue;
    Winner& w = zbuf[static_cast<std::size_t>(hit->pixel)];
    if (w.beats(hit->depth, static_cast<std::int64_t>(i))) w = {hit->depth, static_cast<std::int64_t>(i)};
  }
  return resolve(points, owner, camera, zbuf, depth_tolerance, false);
}

Visibility zbuffer_visibility(std::span<const Vec3> points, std::span<const std::uint32_t> owner,
                              const PinholeCamera& camera, double depth_tolerance) {
  check_owner(points, owner);
  const std::size_t pixels = static_cast<std::size_t>(camera.resolution) * camera.resolution;
  std::vector<Winner> zbuf(pixels);
  const std::int64_t n = static_cast<std::int64_t>(points.size());
#pragma omp parallel
  {
    std::vector<Winner> local(pixels);
#pragma omp for schedule(static) nowait
    for (std::int64_t i = 0; i < n; ++i) {
      const auto hit = camera.project(points[static_cast<std::size_t>(i)]);
      if (!hit) continue;
      Winner& w = local[static_cast<std::size_t>(hit->pixel)];
      if (w.beats(hit->depth, i)) w = {hit->depth, i};
    }
#pragma omp critical(zbuffer_merge)
    for (std::size_t px = 0; px < pixels; ++px) {
      if (local[px].index >= 0 && zbuf[px].beats(local[px].depth, local[px].index)) zbuf[px] = local[px];
    }
  }
  return resolve(points, owner, camera, zbuf, depth_tolerance, true);
}

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) build(0, static_cast<std::int32_t>(points_.size()));
}

std::int32_t KdTree::build(std::int32_t begin, std::int32_t end) {
  constexpr std::int32_t kLeafSize = 12;
  const std::int32_t id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({begin, end, -1, -1, 0, 0.0});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(begin)])], hi = lo;
  for (std::int32_t i = begin; i < end; ++i) {
    const Vec3& p = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::int32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](std::int32_t a, std::int32_t b) {
    return points_[static_cast<std::size_t>(a)][axis] < points_[static_cast<std::size_t>(b)][axis];
  });
  const double split = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(mid)])][axis];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  Node& node = nodes_[static_cast<std::size_t>(id)];
  node.left = left;
  node.right = right;
  node.axis = axis;
  node.split = split;
  return id;
}

void KdTree::search(std::int32_t id, const Vec3& q, double& best) const {
  const Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.left < 0) {
    for (std::int32_t i = node.begin; i < node.end; ++i) {
      best = std::min(best, squared_distance(q, points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])]));
    }
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double diff = q[node.axis] - node.split;
  const std::int32_t near = diff < 0 ? node.left : node.right;
  const std::int32_t far = diff < 0 ? node.right : node.left;
  search(near, q, best);
  if (diff * diff <= best) search(far, q, best);
}

double KdTree::nearest_squared(const Vec3& q) const {
  double best = std::numeric_limits<double>::infinity();
  if (!nodes_.empty()) search(0, q, best);
  return best;
}

std::vector<double> nearest_squared_distances_serial(std::span<const Vec3> query, std::span<const Vec3> reference) {
  std::vector<double> out(query.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < query.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& r : reference) best = std::min(best, squared_distance(query[i], r));
    out[i] = best;
  }
  return out;
}

std::vector<double> nearest_squared_distances(std::span<const Vec3> query, std::span<const Vec3> reference) {
  const KdTree tree(reference);
  std::vector<double> out(query.size());
  const std::int64_t n = static_cast<std::int64_t>(query.size());
#pragma omp parallel for schedule(dynamic, 256)
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = tree.nearest_squared(query[static_cast<std::size_t>(i)]);
  return out;
}

std::size_t VoxelGrid::count() const { return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1})); }

namespace {

int cell_of(double v, double lo, double extent, int res) {
  if (!(extent > 0)) return 0;
  const int c = static_cast<int>(std::floor((v - lo) / extent * res));
  return std::clamp(c, 0, res - 1);
}

void check_voxel_args(const Aabb& bounds, int resolution) {
  if (resolution < 1) throw ConfigError("voxel resolution must be positive");
  if (!(bounds.extent().array() >= 0.0).all()) throw DegenerateGeometryError("voxel bounds are inverted");
}

}  // namespace

VoxelGrid voxelize_filled_serial(std::span<const Vec3> points, const Aabb& bounds, int resolution) {
  check_voxel_args(bounds, resolution);
  const std::size_t res = static_cast<std::size_t>(resolution);
  VoxelGrid grid{bounds, resolution, std::vector<std::uint8_t>(res * res * res, 0)};
  const Vec3 ext = bounds.extent();
  for (const Vec3& p : points) {
    const std::size_t x = static_cast<std::size_t>(cell_of(p.x(), bounds.min.x(), ext.x(), resolution));
    const std::size_t y = static_cast<std::size_t>(cell_of(p.y(), bounds.min.y(), ext.y(), resolution));
    const std::size_t z = static_cast<std::size_t>(cell_of(p.z(), bounds.min.z(), ext.z(), resolution));
    grid.cells[(x * res + y) * res + z] = 1;
  }
  for (std::size_t col = 0; col < res * res; ++col) {
    std::uint8_t* c = grid.cells.data() + col * res;
    std::size_t lo = res, hi = 0;
    for (std::size_t z = 0; z < res; ++z) {
      if (c[z]) {
        lo = std::min(lo, z);
        hi = z;
      }
    }
    for (std::size_t z = lo; z <= hi && lo < res; ++z) c[z] = 1;
  }
  return grid;
}

VoxelGrid voxelize_filled(std::span<const Vec3> points, const Aabb& bounds, int resolution) {
  check_voxel_args(bounds, resolution);
  const std::size_t res = static_cast<std::size_t>(resolution);
  VoxelGrid grid{bounds, resolution, std::vector<std::uint8_t>(res * res * res, 0)};
  const Vec3 ext = bounds.extent();
  const std::int64_t n = static_cast<std::int64_t>(points.size());
  // Concurrent writes all store the same value 1.
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const Vec3& p = points[static_cast<std::size_t>(i)];
    const std::size_t x = static_cast<std::size_t>(cell_of(p.x(), bounds.min.x(), ext.x(), resolution));
    const std::size_t y = static_cast<std::size_t>(cell_of(p.y(), bounds.min.y(), ext.y(), resolution));
    const std::size_t z = static_cast<std::size_t>(cell_of(p.z(), bounds.min.z(), ext.z(), resolution));
#pragma omp atomic write
    grid.cells[(x * res + y) * res + z] = 1;
  }
  const std::int64_t columns = static_cast<std::int64_t>(res * res);
#pragma omp parallel for schedule(static)
  for (std::int64_t col = 0; col < columns; ++col) {
    std::uint8_t* c = grid.cells.data() + static_cast<std::size_t>(col) * res;
    std::size_t lo = res, hi = 0;
    for (std::size_t z = 0; z < res; ++z) {
      if (c[z]) {
        lo = std::min(lo, z);
        hi = z;
      }
    }
    for (std::size_t z = lo; z <= hi && lo < res; ++z) c[z] = 1;
  }
  return grid;
}

}  // namespace scenemaker::kernels

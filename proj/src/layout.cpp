#include "scenemaker/layout.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "scenemaker/errors.hpp"
#include "scenemaker/rng.hpp"

namespace scenemaker {

namespace {
constexpr double kDeg = M_PI / 180.0;
}

Vec3 CameraSpec::eye() const {
  const double el = elevation_deg * kDeg, az = azimuth_deg * kDeg;
  return look_at + radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

kernels::PinholeCamera CameraSpec::pinhole() const {
  return kernels::PinholeCamera::look_at(eye(), look_at, fov_deg, resolution);
}

ComposedScene SceneSample::composed() const {
  std::vector<PointCloud> clouds;
  std::vector<Pose> ps;
  for (const ObjectSample& o : objects) {
    clouds.push_back(o.canonical);
    ps.push_back(o.pose);
  }
  return compose_scene(clouds, ps);
}

std::vector<Pose> SceneSample::poses() const {
  std::vector<Pose> out;
  for (const ObjectSample& o : objects) out.push_back(o.pose);
  return out;
}

void validate(const DatasetConfig& c) {
  if (c.scenes < 1) throw ConfigError("dataset.scenes must be at least 1");
  if (c.min_objects < 1 || c.max_objects < c.min_objects) throw ConfigError("dataset object count range is invalid");
  if (c.max_objects > c.layout.max_objects) throw ConfigError("dataset.max_objects exceeds layout.max_objects");
  if (c.points_per_object < 64) throw ConfigError("dataset.points_per_object must be at least 64");
  if (!(c.layout.size_min > 0 && c.layout.size_max >= c.layout.size_min)) throw ConfigError("layout size range is invalid");
  if (c.layout.xy_max < c.layout.xy_min) throw ConfigError("layout x-y range is inverted");
  if (c.layout.rejection_budget < 1) throw ConfigError("layout.rejection_budget must be positive");
  if (c.camera.elevation_min_deg < 0 || c.camera.elevation_max_deg > 90 ||
      c.camera.elevation_max_deg < c.camera.elevation_min_deg) {
    throw ConfigError("camera elevation range is invalid");
  }
  if (!(c.camera.radius_min > 0 && c.camera.radius_max >= c.camera.radius_min)) throw ConfigError("camera radius range is invalid");
  if (c.camera.resolution < 16) throw ConfigError("camera.resolution must be at least 16");
  double total = 0;
  for (double w : c.shape_weights) {
    if (w < 0) throw ConfigError("shape weights must be non-negative");
    total += w;
  }
  if (!(total > 0)) throw ConfigError("shape weights must not all be zero");
}

Layout sample_layout(std::uint64_t seed, std::span<const PointCloud> canonical, const LayoutConfig& config) {
  const int n = static_cast<int>(canonical.size());
  if (n < 1 || n > config.max_objects) {
    throw ConfigError("layout object count " + std::to_string(n) + " outside [1, " + std::to_string(config.max_objects) + "]");
  }
  Rng rng(seed);
  Layout layout;
  std::vector<Aabb> placed;
  for (int i = 0; i < n; ++i) {
    const PointCloud& cloud = canonical[static_cast<std::size_t>(i)];
    if (cloud.empty()) throw DegenerateGeometryError("layout: empty canonical cloud");
    ObjectAugmentation aug;
    aug.yaw_deg = rng.uniform(0.0, 360.0);
    aug.pitch_deg = rng.uniform(-config.pitch_range_deg, config.pitch_range_deg);
    Pose pose;
    pose.rotation = rotation_z(aug.yaw_deg * kDeg) * rotation_y(aug.pitch_deg * kDeg);
    const double base = rng.uniform(config.size_min, config.size_max);
    for (int k = 0; k < 3; ++k) pose.size[k] = base * (1.0 + rng.uniform(-config.size_jitter, config.size_jitter));

    // Box of the rotated, scaled cloud before translation; grounding lifts the
    // lowest point onto z = 0.
    const Aabb local = aabb_of(apply_pose(pose, cloud));
    pose.translation.z() = -local.min.z();

    bool ok = false;
    while (!ok) {
      if (layout.attempts >= config.rejection_budget) {
        throw LayoutInfeasibleError("layout: no collision-free placement after " + std::to_string(layout.attempts) +
                                    " attempts (" + std::to_string(i) + " of " + std::to_string(n) + " placed)");
      }
      ++layout.attempts;
      pose.translation.x() = rng.uniform(config.xy_min, config.xy_max);
      pose.translation.y() = rng.uniform(config.xy_min, config.xy_max);
      const Aabb box{local.min + pose.translation, local.max + pose.translation};
      ok = std::none_of(placed.begin(), placed.end(), [&](const Aabb& other) { return aabb_intersects(box, other); });
      if (ok) placed.push_back(box);
    }
    layout.poses.push_back(pose);
    layout.augmentation.push_back(aug);
  }
  return layout;
}

CameraSpec sample_camera(std::uint64_t seed, const CameraConfig& config) {
  Rng rng(seed);
  CameraSpec cam;
  cam.elevation_deg = rng.uniform(config.elevation_min_deg, config.elevation_max_deg);
  cam.azimuth_deg = rng.uniform(0.0, 360.0);
  cam.radius = rng.uniform(config.radius_min, config.radius_max);
  cam.look_at = config.look_at;
  cam.resolution = config.resolution;
  cam.fov_deg = config.fov_deg;
  return cam;
}

RenderResult render_partial(std::span<const PointCloud> posed, const CameraSpec& camera, const RenderConfig& config,
                            std::uint64_t noise_seed) {
  if (camera.resolution < 16) throw ConfigError("render resolution must be at least 16");
  std::vector<Vec3> points;
  std::vector<std::uint32_t> owner;
  for (std::size_t i = 0; i < posed.size(); ++i) {
    points.insert(points.end(), posed[i].begin(), posed[i].end());
    owner.insert(owner.end(), posed[i].size(), static_cast<std::uint32_t>(i));
  }
  const kernels::PinholeCamera pin = camera.pinhole();
  kernels::Visibility vis = kernels::zbuffer_visibility(points, owner, pin, config.depth_tolerance);

  RenderResult out;
  out.partial.resize(posed.size());
  out.pixel_owner = std::move(vis.pixel_owner);
  Rng noise(noise_seed);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!vis.visible[i]) continue;
    Vec3 p = points[i];
    if (config.depth_noise > 0) p += (p - pin.position).normalized() * (config.depth_noise * noise.normal());
    out.partial[owner[i]].push_back(p);
    ++out.visible_total;
  }
  for (std::size_t i = 0; i < posed.size(); ++i) {
    const double total = static_cast<double>(posed[i].size());
    out.visibility.push_back(total > 0 ? static_cast<double>(out.partial[i].size()) / total : 0.0);
    out.occluded.push_back(out.partial[i].empty());
  }
  return out;
}

std::optional<PointCloud> normalize_object_partial(const PointCloud& partial) {
  if (partial.empty()) return std::nullopt;
  const Vec3 c = centroid(partial);
  double reach = 0.0;
  for (const Vec3& p : partial) reach = std::max(reach, (p - c).cwiseAbs().maxCoeff());
  // A single visible point carries position only; it maps to the origin.
  const double scale = reach > 1e-12 ? reach : 1.0;
  PointCloud out;
  out.reserve(partial.size());
  for (const Vec3& p : partial) out.push_back((p - c) / scale);
  return out;
}

std::string scene_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%06d", index);
  return buf;
}

SceneSample generate_scene(const DatasetConfig& config, std::uint64_t scene_seed, const std::string& scene_id) {
  Rng rng(derive_seed(scene_seed, "count"));
  const int n = rng.integer(config.min_objects, config.max_objects);
  SceneSample scene;
  scene.scene_id = scene_id;
  scene.seed = scene_seed;
  std::vector<PointCloud> canonical;
  for (int i = 0; i < n; ++i) {
    SampledShape s = sample_shape(derive_seed(scene_seed, "shape/" + std::to_string(i)), config.shape_weights,
                                  config.points_per_object);
    ObjectSample obj;
    obj.shape = s.spec;
    obj.canonical = std::move(s.points);
    canonical.push_back(obj.canonical);
    scene.objects.push_back(std::move(obj));
  }
  const Layout layout = sample_layout(derive_seed(scene_seed, "layout"), canonical, config.layout);
  scene.camera = sample_camera(derive_seed(scene_seed, "camera"), config.camera);

  std::vector<PointCloud> posed;
  std::vector<PosedObject> refs;
  for (int i = 0; i < n; ++i) {
    ObjectSample& obj = scene.objects[static_cast<std::size_t>(i)];
    obj.pose = layout.poses[static_cast<std::size_t>(i)];
    obj.augmentation = layout.augmentation[static_cast<std::size_t>(i)];
    posed.push_back(apply_pose(obj.pose, obj.canonical));
  }
  for (const ObjectSample& obj : scene.objects) refs.push_back({&obj.canonical, obj.pose});
  scene.normalization = normalize_scene(refs).normalization;

  RenderResult render = render_partial(posed, scene.camera, config.render, derive_seed(scene_seed, "depth-noise"));
  for (int i = 0; i < n; ++i) {
    ObjectSample& obj = scene.objects[static_cast<std::size_t>(i)];
    obj.partial = std::move(render.partial[static_cast<std::size_t>(i)]);
    obj.visibility = render.visibility[static_cast<std::size_t>(i)];
    obj.occluded = render.occluded[static_cast<std::size_t>(i)];
    obj.partial_normalized = normalize_object_partial(obj.partial);
  }
  return scene;
}

std::vector<SceneSample> generate_dataset(const DatasetConfig& config, std::uint64_t seed) {
  validate(config);
  std::vector<SceneSample> scenes(static_cast<std::size_t>(config.scenes));
  std::vector<std::string> errors(scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < config.scenes; ++i) {
    try {
      scenes[static_cast<std::size_t>(i)] =
          generate_scene(config, derive_seed(seed, "dataset/scene/" + std::to_string(i)), scene_name(i));
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) throw LayoutInfeasibleError(scene_name(static_cast<int>(i)) + ": " + errors[i]);
  }
  return scenes;
}

bool is_grounded(const SceneSample& scene, double tol) {
  for (const ObjectSample& o : scene.objects) {
    const Aabb box = aabb_of(apply_pose(o.pose, o.canonical));
    if (std::abs(box.min.z()) > tol) return false;
  }
  return true;
}

bool is_non_intersecting(const SceneSample& scene) {
  std::vector<Aabb> boxes;
  for (const ObjectSample& o : scene.objects) boxes.push_back(aabb_of(apply_pose(o.pose, o.canonical)));
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      if (aabb_intersects(boxes[i], boxes[j])) return false;
    }
  }
  return true;
}

}  // namespace scenemaker

#include "scenemaker/metrics.hpp"

#include <cmath>

#include "scenemaker/errors.hpp"
#include "scenemaker/kernels.hpp"
#include "scenemaker/rng.hpp"

namespace scenemaker {

namespace {

// Serial sum so that the result does not depend on the thread count.
double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::size_t count_within(const std::vector<double>& squared, double tau) {
  const double t2 = tau * tau;
  std::size_t n = 0;
  for (double d : squared) n += d <= t2 ? 1 : 0;
  return n;
}

void accumulate(std::optional<double>& sum, int& count, const std::optional<double>& v) {
  if (!v) return;
  sum = sum.value_or(0.0) + *v;
  ++count;
}

std::optional<double> finish(const std::optional<double>& sum, int count) {
  if (!sum || count == 0) return std::nullopt;
  return *sum / count;
}

}  // namespace

std::optional<double> chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) return std::nullopt;
  return mean_of(kernels::nearest_squared_distances(a, b)) + mean_of(kernels::nearest_squared_distances(b, a));
}

std::optional<double> fscore(const PointCloud& a, const PointCloud& b, double tau) {
  if (!(tau > 0)) throw ConfigError("fscore threshold must be positive");
  if (a.empty() || b.empty()) return std::nullopt;
  const double precision =
      static_cast<double>(count_within(kernels::nearest_squared_distances(a, b), tau)) / static_cast<double>(a.size());
  const double recall =
      static_cast<double>(count_within(kernels::nearest_squared_distances(b, a), tau)) / static_cast<double>(b.size());
  if (precision + recall == 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

std::optional<double> volume_iou(const PointCloud& a, const PointCloud& b, int resolution) {
  if (resolution < 8) throw ConfigError("volume_iou resolution must be at least 8");
  if (a.empty() || b.empty()) return std::nullopt;
  const Aabb bounds = aabb_of(a).merged(aabb_of(b));
  if (!(bounds.volume() > 0)) return std::nullopt;
  const kernels::VoxelGrid ga = kernels::voxelize_filled(a, bounds, resolution);
  const kernels::VoxelGrid gb = kernels::voxelize_filled(b, bounds, resolution);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < ga.cells.size(); ++i) {
    inter += (ga.cells[i] & gb.cells[i]) ? 1 : 0;
    uni += (ga.cells[i] | gb.cells[i]) ? 1 : 0;
  }
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

struct PosedPair {
  std::vector<PointCloud> predicted, truth;
};

PosedPair pose_all(std::span<const PointCloud> canonical, std::span<const Pose> predicted, std::span<const Pose> truth,
                   const SceneNormalization& frame) {
  if (canonical.size() != predicted.size() || canonical.size() != truth.size()) {
    throw ConfigError("evaluate: object counts differ (canonical " + std::to_string(canonical.size()) + ", predicted " +
                      std::to_string(predicted.size()) + ", truth " + std::to_string(truth.size()) + ")");
  }
  if (canonical.empty()) throw ConfigError("evaluate: scene has no objects");
  PosedPair out;
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    out.predicted.push_back(apply_pose(frame.to_normalized(predicted[i]), canonical[i]));
    out.truth.push_back(apply_pose(frame.to_normalized(truth[i]), canonical[i]));
  }
  return out;
}

std::optional<double> box_iou(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) return std::nullopt;
  const IouResult r = aabb_iou_3d(aabb_of(a), aabb_of(b));
  if (r.degenerate) return std::nullopt;
  return r.value;
}

}  // namespace

MetricsReport evaluate_boxes(std::span<const PointCloud> canonical, std::span<const Pose> predicted,
                             std::span<const Pose> truth, const SceneNormalization& frame) {
  const PosedPair posed = pose_all(canonical, predicted, truth, frame);
  MetricsReport r;
  std::optional<double> sum;
  int count = 0;
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    ObjectMetrics om;
    om.iou_b = box_iou(posed.predicted[i], posed.truth[i]);
    accumulate(sum, count, om.iou_b);
    r.objects.push_back(om);
  }
  r.iou_b = finish(sum, count);
  return r;
}

MetricsReport evaluate_scene(std::span<const PointCloud> canonical, std::span<const Pose> predicted,
                             std::span<const Pose> truth, const SceneNormalization& frame, const MetricSettings& settings) {
  const PosedPair posed = pose_all(canonical, predicted, truth, frame);
  MetricsReport r;
  r.fscore_tau = settings.fscore_tau;
  r.voxel_resolution = settings.voxel_resolution;

  PointCloud scene_pred, scene_truth;
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    scene_pred.insert(scene_pred.end(), posed.predicted[i].begin(), posed.predicted[i].end());
    scene_truth.insert(scene_truth.end(), posed.truth[i].begin(), posed.truth[i].end());
  }
  r.cd_s = chamfer(scene_pred, scene_truth);
  r.fscore_s = fscore(scene_pred, scene_truth, settings.fscore_tau);

  std::optional<double> cd, fs, iou, vol;
  int n_cd = 0, n_fs = 0, n_iou = 0, n_vol = 0;
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    ObjectMetrics om;
    om.chamfer = chamfer(posed.predicted[i], posed.truth[i]);
    om.fscore = fscore(posed.predicted[i], posed.truth[i], settings.fscore_tau);
    om.iou_b = box_iou(posed.predicted[i], posed.truth[i]);
    om.volume_iou = volume_iou(posed.predicted[i], posed.truth[i], settings.voxel_resolution);
    accumulate(cd, n_cd, om.chamfer);
    accumulate(fs, n_fs, om.fscore);
    accumulate(iou, n_iou, om.iou_b);
    accumulate(vol, n_vol, om.volume_iou);
    r.objects.push_back(om);
  }
  r.cd_o = finish(cd, n_cd);
  r.fscore_o = finish(fs, n_fs);
  r.iou_b = finish(iou, n_iou);
  r.volume_iou = finish(vol, n_vol);
  return r;
}

MetricsReport mean_report(std::span<const MetricsReport> reports) {
  MetricsReport out;
  if (reports.empty()) return out;
  out.fscore_tau = reports.front().fscore_tau;
  out.voxel_resolution = reports.front().voxel_resolution;
  out.box_convention = reports.front().box_convention;
  auto field_mean = [&](std::optional<double> MetricsReport::*field) {
    std::optional<double> sum;
    int count = 0;
    for (const MetricsReport& r : reports) accumulate(sum, count, r.*field);
    out.*field = finish(sum, count);
  };
  field_mean(&MetricsReport::cd_s);
  field_mean(&MetricsReport::fscore_s);
  field_mean(&MetricsReport::cd_o);
  field_mean(&MetricsReport::fscore_o);
  field_mean(&MetricsReport::iou_b);
  field_mean(&MetricsReport::volume_iou);
  return out;
}

std::vector<Pose> random_pose_baseline(std::uint64_t seed, int objects, const BaselineRange& range) {
  Rng rng(seed);
  std::vector<Pose> out;
  for (int i = 0; i < objects; ++i) {
    Pose p;
    p.rotation = rotation_z(rng.uniform(0.0, 2 * M_PI));
    for (int k = 0; k < 3; ++k) {
      p.translation[k] = rng.uniform(range.translation.min[k], range.translation.max[k]);
      p.size[k] = rng.uniform(range.size_min[k], range.size_max[k]);
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace scenemaker

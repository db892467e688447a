// Serial references against the OpenMP kernels on scene-sized inputs.
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include "scenemaker/kernels.hpp"
#include "scenemaker/layout.hpp"
#include "scenemaker/rng.hpp"

using namespace scenemaker;

namespace {

PointCloud cloud(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  PointCloud out(n);
  for (Vec3& p : out) p = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1));
  return out;
}

// Posed object clouds of one generated scene, flattened with owners.
struct SceneCloud {
  PointCloud points;
  std::vector<std::uint32_t> owner;
  kernels::PinholeCamera camera;
};

const SceneCloud& scene_cloud() {
  static const SceneCloud s = [] {
    SceneCloud out;
    DatasetConfig cfg;
    cfg.min_objects = cfg.max_objects = 5;
    const SceneSample scene = generate_scene(cfg, 7, "bench");
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      for (const Vec3& p : apply_pose(scene.objects[i].pose, scene.objects[i].canonical)) {
        out.points.push_back(p);
        out.owner.push_back(static_cast<std::uint32_t>(i));
      }
    }
    out.camera = kernels::PinholeCamera::look_at(Vec3(2.5, 0.5, 1.5), Vec3(0, 0, 0.15), 45.0, 256);
    return out;
  }();
  return s;
}

template <auto Fn>
void nearest(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const PointCloud q = cloud(1, n), r = cloud(2, n);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(q, r));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

template <auto Fn>
void zbuffer(benchmark::State& state) {
  const SceneCloud& s = scene_cloud();
  for (auto _ : state) benchmark::DoNotOptimize(Fn(s.points, s.owner, s.camera, 0.03));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * s.points.size()));
}

template <auto Fn>
void voxelize(benchmark::State& state) {
  const PointCloud p = cloud(3, 200000);
  const Aabb box{Vec3(-1, -1, 0), Vec3(1, 1, 1)};
  const int res = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(Fn(p, box, res));
}

}  // namespace

BENCHMARK(nearest<kernels::nearest_squared_distances_serial>)->Name("nearest/serial_bruteforce")->Arg(2048);
BENCHMARK(nearest<kernels::nearest_squared_distances>)->Name("nearest/kdtree_omp")->Arg(2048)->Arg(20000);
BENCHMARK(zbuffer<kernels::zbuffer_visibility_serial>)->Name("zbuffer/serial");
BENCHMARK(zbuffer<kernels::zbuffer_visibility>)->Name("zbuffer/omp");
BENCHMARK(voxelize<kernels::voxelize_filled_serial>)->Name("voxelize/serial")->Arg(64)->Arg(128);
BENCHMARK(voxelize<kernels::voxelize_filled>)->Name("voxelize/omp")->Arg(64)->Arg(128);

BENCHMARK_MAIN();

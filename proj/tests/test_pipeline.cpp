#include <cmath>
#include <set>

#include "doctest.h"
#include "scenemaker/errors.hpp"
#include "scenemaker/pipeline.hpp"
#include "support.hpp"

using namespace scenemaker;

namespace {

RunConfig tiny_run(int steps) {
  RunConfig c;
  c.seed = 5;
  c.dataset.points_per_object = 600;
  c.dataset.camera.resolution = 64;
  c.conditioning = {64, 64, 128, 256};
  c.model.width = 16;
  c.model.heads = 2;
  c.model.blocks = 1;
  c.model.point_hidden = 8;
  c.model.ffn_multiplier = 2;
  c.model.k_local = 4;
  c.model.k_global = 8;
  c.model.sampling_steps = 4;
  c.training.steps = steps;
  c.training.batch_size = 4;
  c.training.warmup_steps = 5;
  c.training.learning_rate = 3e-3;
  return c;
}

double pose_distance(const Pose& a, const Pose& b) {
  return (a.rotation - b.rotation).norm() + (a.translation - b.translation).norm() + (a.size - b.size).norm();
}

}  // namespace

TEST_CASE("learning rate schedule: warmup then cosine decay to the floor") {
  TrainingConfig c;
  c.steps = 200;
  c.warmup_steps = 20;
  c.learning_rate = 1e-3;
  c.final_lr_fraction = 0.1;
  CHECK(learning_rate_at(0, c) == doctest::Approx(1e-3 / 20));
  CHECK(learning_rate_at(19, c) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(20, c) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(110, c) == doctest::Approx(1e-3 * (0.1 + 0.9 * 0.5)));
  CHECK(learning_rate_at(200, c) == doctest::Approx(1e-4));
  for (int s = 21; s < 200; ++s) CHECK(learning_rate_at(s, c) <= learning_rate_at(s - 1, c));
}

TEST_CASE("scene seeds and subsampling") {
  CHECK(scene_seed(42, "train", 3) == derive_seed(42, "dataset/scene/3"));
  CHECK(scene_seed(42, "eval", 3) == derive_seed(42, "dataset/eval/3"));
  CHECK(scene_seed(42, "eval", 3) != scene_seed(42, "train", 3));

  const PointCloud cloud = testing::random_cloud(1, 500);
  const PointCloud sub = subsample(cloud, 100, 9);
  REQUIRE(sub.size() == 100);
  CHECK(subsample(cloud, 100, 9) == sub);
  // A subset in the original order.
  std::size_t at = 0;
  for (const Vec3& p : sub) {
    while (at < cloud.size() && cloud[at] != p) ++at;
    CHECK(at < cloud.size());
    ++at;
  }
  CHECK(subsample(cloud, 1000, 9) == cloud);
}

TEST_CASE("prepare_scene: targets map back to the ground truth") {
  const RunConfig cfg = tiny_run(1);
  for (int i = 0; i < 6; ++i) {
    const SceneSample scene = generate_scene(cfg.dataset, scene_seed(cfg.seed, "train", i), scene_name(i));
    for (bool complete : {false, true}) {
      const PreparedScene p = prepare_scene(scene, cfg.conditioning, complete);
      const int n = static_cast<int>(scene.objects.size());
      CHECK(p.input.objects() == n);
      CHECK(p.target.rows() == n);
      CHECK(p.target.cols() == 12);
      CHECK(p.truth.size() == scene.objects.size());
      CHECK(p.input.global.size() == p.input.global_owner.size());
      CHECK(p.input.global.size() <= 128);
      for (std::uint32_t owner : p.input.global_owner) CHECK(owner < static_cast<std::uint32_t>(n));
      const DecodedPoses decoded = decode_pose_rows(p.target);
      for (int k = 0; k < n; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        CHECK(p.input.geometry[uk].size() <= 64);
        CHECK(pose_distance(p.observation.from_normalized(decoded.poses[uk]), p.truth[uk]) < 1e-4 * p.observation.scale * 10);
        if (complete) CHECK(p.input.local[uk].has_value());
        if (!complete) CHECK(p.input.local[uk].has_value() == !scene.objects[uk].occluded);
      }
      // Observed points land in the unit cube of the observation frame.
      for (const Vec3& q : p.input.global) CHECK(q.cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("synthesize_split and write_dataset agree and are deterministic") {
  const RunConfig cfg = tiny_run(1);
  const PreparedSplit a = synthesize_split(cfg.dataset, cfg.conditioning, 11, "eval", 6, true);
  const PreparedSplit b = synthesize_split(cfg.dataset, cfg.conditioning, 11, "eval", 6, false);
  CHECK(a.fingerprint == b.fingerprint);
  CHECK(a.partial.size() == 6);
  CHECK(a.complete.size() == 6);
  CHECK(b.complete.empty());
  for (std::size_t i = 0; i < 6; ++i) CHECK(a.partial[i].target == b.partial[i].target);

  testing::TempDir tmp("dataset");
  const DatasetInfo info = write_dataset(tmp.path(), cfg.dataset, 11, "eval", 6);
  CHECK(info.fingerprint == a.fingerprint);
  DatasetInfo loaded_info;
  const auto loaded = load_prepared(tmp.path(), cfg.conditioning, false, &loaded_info);
  CHECK(loaded_info.fingerprint == info.fingerprint);
  REQUIRE(loaded.size() == 6);
  std::set<std::string> ids;
  for (const PreparedScene& s : loaded) ids.insert(s.scene_id);
  CHECK(ids.size() == 6);
  CHECK(loaded[2].truth.size() == a.partial[2].truth.size());
}

TEST_CASE("training smoke test: loss falls and runs repeat exactly") {
  const RunConfig cfg = tiny_run(150);
  const PreparedSplit split = synthesize_split(cfg.dataset, cfg.conditioning, cfg.seed, "train", 16, false);
  TrainResult first, second;
  const PoseDiT<float> model = train_variant(cfg, ablation_variants()[0], split.partial, &first);
  (void)train_variant(cfg, ablation_variants()[0], split.partial, &second);
  CHECK(first.loss.size() == 150);
  CHECK(first.steps_per_epoch == 4);
  CHECK(first.final_epoch_mean < first.initial_epoch_mean);
  CHECK(first.loss == second.loss);

  const MetricSettings settings;
  const EvaluationRun run = evaluate_model(model, split.partial, 3, settings, true);
  const EvaluationRun again = evaluate_model(model, split.partial, 3, settings, true);
  CHECK(run.scenes.size() == 16);
  CHECK(*run.mean.iou_b == *again.mean.iou_b);
  for (const auto& [id, pred] : run.predictions) {
    for (const Pose& p : pred.poses) CHECK(is_rotation(p.rotation, 1e-6));
  }
}

TEST_CASE("evaluation of ground truth and of the baseline") {
  const RunConfig cfg = tiny_run(1);
  const PreparedSplit split = synthesize_split(cfg.dataset, cfg.conditioning, 2, "eval", 4, false);
  for (const PreparedScene& s : split.partial) {
    const MetricsReport r = evaluate_prepared(s, s.truth, cfg.metrics, false);
    CHECK(*r.iou_b == doctest::Approx(1.0));
    CHECK(*r.cd_s == doctest::Approx(0.0));
    CHECK(*r.fscore_o == doctest::Approx(1.0));
  }
  const SizeRange sizes = training_size_range(split.partial);
  CHECK((sizes.min.array() <= sizes.max.array()).all());
  const auto poses = baseline_poses(split.partial[0], sizes, 8);
  CHECK(poses.size() == split.partial[0].truth.size());
  for (const Pose& p : poses) {
    CHECK((p.size.array() >= sizes.min.array() - 1e-12).all());
    CHECK((p.size.array() <= sizes.max.array() + 1e-12).all());
  }
  const EvaluationRun b = evaluate_baseline(split.partial, sizes, 8, cfg.metrics, true);
  CHECK(*b.mean.iou_b < 1.0);
}

TEST_CASE("ablation: five variants and reproducible reports") {
  RunConfig cfg = tiny_run(8);
  const PreparedSplit train = synthesize_split(cfg.dataset, cfg.conditioning, cfg.seed, "train", 8, true);
  const PreparedSplit eval = synthesize_split(cfg.dataset, cfg.conditioning, cfg.seed, "eval", 4, true);
  const ExperimentReport a = run_ablation(cfg, train, eval, true);
  REQUIRE(a.rows.size() == 5);
  const std::vector<std::string> names = {"full", "w/o GSA", "w/o LSA", "w/o LCA", "+ complete points"};
  for (std::size_t i = 0; i < 5; ++i) CHECK(a.rows[i].spec.name == names[i]);
  CHECK(a.rows[4].spec.complete_points);

  const ExperimentReport b = run_ablation(cfg, train, eval, true);
  auto strip = [](nlohmann::json j) {
    j.erase("wall_clock_seconds");
    for (auto& row : j.at("rows")) row.at("training").erase("seconds");
    return j;
  };
  CHECK(strip(to_json(a)) == strip(to_json(b)));
  CHECK(to_json(experiment_from_json(to_json(a))) == to_json(a));

  const std::string md = render_markdown(a);
  for (const std::string& n : names) CHECK(md.find("| " + n + " |") != std::string::npos);
  CHECK(md.find("random poses") != std::string::npos);

  const PreparedSplit no_complete = synthesize_split(cfg.dataset, cfg.conditioning, cfg.seed, "train", 4, false);
  CHECK_THROWS_AS(run_ablation(cfg, no_complete, eval, true), ConfigError);
}

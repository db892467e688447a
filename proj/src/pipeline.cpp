#include "scenemaker/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <numeric>

#include "scenemaker/errors.hpp"
#include "scenemaker/rng.hpp"

namespace scenemaker {

using nlohmann::json;

namespace {

std::vector<std::size_t> subsample_indices(std::size_t n, int count, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count < 0 || n <= static_cast<std::size_t>(count)) return idx;
  Rng rng(seed);
  // Partial Fisher-Yates, then restore input order.
  for (std::size_t i = 0; i < static_cast<std::size_t>(count); ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::uint64_t scene_seed(std::uint64_t seed, const std::string& split, int index) {
  if (split == "train") return derive_seed(seed, "dataset/scene/" + std::to_string(index));
  return derive_seed(seed, "dataset/" + split + "/" + std::to_string(index));
}

PointCloud subsample(const PointCloud& cloud, int count, std::uint64_t seed) {
  PointCloud out;
  for (std::size_t i : subsample_indices(cloud.size(), count, seed)) out.push_back(cloud[i]);
  return out;
}

PreparedScene prepare_scene(const SceneSample& scene, const ConditioningConfig& config, bool complete_points) {
  const int n = static_cast<int>(scene.objects.size());
  if (n < 1) throw ConfigError("scene " + scene.scene_id + " has no objects");
  const std::uint64_t base = derive_seed(scene.seed, "prepare");
  PreparedScene p;
  p.scene_id = scene.scene_id;
  p.truth = scene.poses();
  p.truth_frame = scene.normalization;

  PointCloud observed;
  std::vector<std::uint32_t> owner;
  std::vector<PointCloud> sources(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const ObjectSample& o = scene.objects[static_cast<std::size_t>(i)];
    const std::string tag = std::to_string(i);
    p.input.geometry.push_back(subsample(o.canonical, config.geometry_points, derive_seed(base, "geometry/" + tag)));
    p.eval_canonical.push_back(subsample(o.canonical, config.eval_points, derive_seed(base, "eval/" + tag)));
    sources[static_cast<std::size_t>(i)] = complete_points ? apply_pose(o.pose, o.canonical) : o.partial;
    const PointCloud& src = sources[static_cast<std::size_t>(i)];
    observed.insert(observed.end(), src.begin(), src.end());
    owner.insert(owner.end(), src.size(), static_cast<std::uint32_t>(i));
  }

  p.observation = p.truth_frame;
  p.observation_fallback = true;
  if (!observed.empty()) {
    try {
      p.observation = fit_normalization(observed);
      p.observation_fallback = false;
    } catch (const DegenerateGeometryError&) {
    }
  }
  if (!observed.empty()) {
    p.observed_box = aabb_of(observed);
  } else {
    PointCloud posed;
    for (int i = 0; i < n; ++i) {
      const PointCloud c = apply_pose(p.truth[static_cast<std::size_t>(i)], scene.objects[static_cast<std::size_t>(i)].canonical);
      posed.insert(posed.end(), c.begin(), c.end());
    }
    p.observed_box = aabb_of(posed);
  }

  for (std::size_t idx : subsample_indices(observed.size(), config.global_points, derive_seed(base, "global"))) {
    p.input.global.push_back(p.observation.to_normalized(observed[idx]));
    p.input.global_owner.push_back(owner[idx]);
  }
  for (int i = 0; i < n; ++i) {
    const std::string tag = std::to_string(i);
    std::optional<PointCloud> local;
    if (complete_points) {
      local = normalize_object_partial(sources[static_cast<std::size_t>(i)]);
    } else {
      local = scene.objects[static_cast<std::size_t>(i)].partial_normalized;
    }
    if (local) local = subsample(*local, config.local_points, derive_seed(base, "local/" + tag));
    p.input.local.push_back(std::move(local));
  }

  std::vector<Pose> normalized;
  for (const Pose& pose : p.truth) normalized.push_back(p.observation.to_normalized(pose));
  p.target = encode_pose_targets<float>(normalized);
  return p;
}

PreparedSplit synthesize_split(const DatasetConfig& dataset, const ConditioningConfig& conditioning, std::uint64_t seed,
                               const std::string& split, int count, bool with_complete) {
  validate(dataset);
  PreparedSplit out;
  out.partial.resize(static_cast<std::size_t>(count));
  if (with_complete) out.complete.resize(static_cast<std::size_t>(count));
  std::vector<std::string> manifests(static_cast<std::size_t>(count));
  std::vector<std::string> errors(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    try {
      const SceneSample scene = generate_scene(dataset, scene_seed(seed, split, i), scene_name(i));
      manifests[ui] = scene_manifest(scene).dump();
      out.partial[ui] = prepare_scene(scene, conditioning, false);
      if (with_complete) out.complete[ui] = prepare_scene(scene, conditioning, true);
    } catch (const std::exception& e) {
      errors[ui] = e.what();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) throw LayoutInfeasibleError(scene_name(static_cast<int>(i)) + ": " + errors[i]);
  }
  std::vector<json> docs;
  for (const std::string& m : manifests) docs.push_back(json::parse(m));
  out.fingerprint = dataset_fingerprint(docs);
  return out;
}

DatasetInfo write_dataset(const std::filesystem::path& dir, const DatasetConfig& dataset, std::uint64_t seed,
                          const std::string& split, int count) {
  validate(dataset);
  if (count < 1) throw ConfigError("dataset needs at least one scene");
  DatasetInfo info;
  info.seed = seed;
  info.config = to_json(dataset);
  info.config["split"] = split;
  info.scenes.resize(static_cast<std::size_t>(count));
  std::vector<json> manifests(static_cast<std::size_t>(count));
  std::vector<std::string> errors(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    try {
      const SceneSample scene = generate_scene(dataset, scene_seed(seed, split, i), scene_name(i));
      write_scene(dir / scene.scene_id, scene);
      info.scenes[ui] = scene.scene_id;
      manifests[ui] = scene_manifest(scene);
    } catch (const std::exception& e) {
      errors[ui] = e.what();
    }
  }
  for (const std::string& e : errors) {
    if (!e.empty()) throw LayoutInfeasibleError(e);
  }
  info.fingerprint = dataset_fingerprint(manifests);
  write_dataset_index(dir, info);
  return info;
}

std::vector<PreparedScene> load_prepared(const std::filesystem::path& dir, const ConditioningConfig& conditioning,
                                         bool complete_points, DatasetInfo* info) {
  const DatasetInfo index = read_dataset_index(dir);
  std::vector<PreparedScene> out(index.scenes.size());
  std::vector<std::exception_ptr> errors(index.scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < index.scenes.size(); ++i) {
    try {
      out[i] = prepare_scene(read_scene(dir / index.scenes[i]), conditioning, complete_points);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (info) *info = index;
  return out;
}

std::vector<TrainSample> train_samples(std::span<const PreparedScene> scenes) {
  std::vector<TrainSample> out;
  for (const PreparedScene& s : scenes) out.push_back({&s.input, &s.target});
  return out;
}

ScenePrediction predict_scene(const PoseDiT<float>& model, const PreparedScene& scene, std::uint64_t seed, int steps) {
  const DecodedPoses decoded = decode_pose_rows(model.sample_rows(scene.input, seed, steps));
  ScenePrediction out;
  for (const Pose& p : decoded.poses) out.poses.push_back(scene.observation.from_normalized(p));
  out.size_clamped = decoded.size_clamped;
  out.rotation_fallback = decoded.rotation_fallback;
  return out;
}

SizeRange training_size_range(std::span<const PreparedScene> scenes) {
  SizeRange r;
  for (const PreparedScene& s : scenes) {
    for (const Pose& p : s.truth) {
      r.min = r.min.cwiseMin(p.size);
      r.max = r.max.cwiseMax(p.size);
    }
  }
  if (!(r.min.allFinite() && r.max.allFinite())) throw ConfigError("size range needs at least one training object");
  return r;
}

std::vector<Pose> baseline_poses(const PreparedScene& scene, const SizeRange& sizes, std::uint64_t seed) {
  return random_pose_baseline(seed, static_cast<int>(scene.truth.size()), {scene.observed_box, sizes.min, sizes.max});
}

MetricsReport evaluate_prepared(const PreparedScene& scene, std::span<const Pose> predicted, const MetricSettings& settings,
                                bool boxes_only) {
  if (boxes_only) return evaluate_boxes(scene.eval_canonical, predicted, scene.truth, scene.truth_frame);
  return evaluate_scene(scene.eval_canonical, predicted, scene.truth, scene.truth_frame, settings);
}

namespace {

template <typename Predict>
EvaluationRun evaluate_with(std::span<const PreparedScene> scenes, const MetricSettings& settings, bool boxes_only,
                            Predict&& predict) {
  EvaluationRun run;
  run.scenes.resize(scenes.size());
  std::vector<ScenePrediction> preds(scenes.size());
  std::vector<std::string> errors(scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    try {
      preds[i] = predict(scenes[i]);
      run.scenes[i] = evaluate_prepared(scenes[i], preds[i].poses, settings, boxes_only);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) throw InternalError("evaluating " + scenes[i].scene_id + ": " + errors[i]);
  }
  for (std::size_t i = 0; i < scenes.size(); ++i) run.predictions.emplace(scenes[i].scene_id, std::move(preds[i]));
  run.mean = mean_report(run.scenes);
  run.mean.fscore_tau = settings.fscore_tau;
  run.mean.voxel_resolution = settings.voxel_resolution;
  return run;
}

}  // namespace

EvaluationRun evaluate_model(const PoseDiT<float>& model, std::span<const PreparedScene> scenes, std::uint64_t seed,
                             const MetricSettings& settings, bool boxes_only, int steps) {
  return evaluate_with(scenes, settings, boxes_only, [&](const PreparedScene& s) {
    return predict_scene(model, s, derive_seed(seed, "sample/" + s.scene_id), steps);
  });
}

EvaluationRun evaluate_baseline(std::span<const PreparedScene> scenes, const SizeRange& sizes, std::uint64_t seed,
                                const MetricSettings& settings, bool boxes_only) {
  return evaluate_with(scenes, settings, boxes_only, [&](const PreparedScene& s) {
    ScenePrediction p;
    p.poses = baseline_poses(s, sizes, derive_seed(seed, "baseline/" + s.scene_id));
    p.size_clamped.assign(p.poses.size(), false);
    p.rotation_fallback.assign(p.poses.size(), false);
    return p;
  });
}

std::vector<VariantSpec> ablation_variants() {
  return {
      {"full", {}, false},
      {"w/o GSA", {true, false, false}, false},
      {"w/o LSA", {false, true, false}, false},
      {"w/o LCA", {false, false, true}, false},
      {"+ complete points", {}, true},
  };
}

PoseDiT<float> train_variant(const RunConfig& config, const VariantSpec& spec, std::span<const PreparedScene> train,
                             TrainResult* result, const TrainProgress& progress) {
  DiTConfig m = model_config(config);
  m.ablation = spec.flags;
  PoseDiT<float> model(m);
  const std::vector<TrainSample> samples = train_samples(train);
  TrainResult r = train_model(model, samples, config.training, derive_seed(config.seed, "train"), progress);
  if (result) *result = std::move(r);
  return model;
}

ExperimentReport run_ablation(const RunConfig& config, const PreparedSplit& train, const PreparedSplit& eval,
                              bool boxes_only, const Progress& progress) {
  const auto start = std::chrono::steady_clock::now();
  if (train.complete.empty() || eval.complete.empty()) throw ConfigError("ablation needs complete-point splits");
  ExperimentReport report;
  report.config = to_json(config);
  report.dataset_fingerprint = train.fingerprint + "/" + eval.fingerprint;
  report.seeds = {{"global", config.seed},
                  {"model", model_config(config).seed},
                  {"train", derive_seed(config.seed, "train")},
                  {"eval", derive_seed(config.seed, "eval")}};
  const SizeRange sizes = training_size_range(train.partial);
  report.baseline = evaluate_baseline(eval.partial, sizes, derive_seed(config.seed, "eval"), config.metrics, boxes_only).mean;
  for (const VariantSpec& spec : ablation_variants()) {
    if (progress) progress("training variant '" + spec.name + "'");
    VariantResult row;
    row.spec = spec;
    const auto& train_set = spec.complete_points ? train.complete : train.partial;
    const auto& eval_set = spec.complete_points ? eval.complete : eval.partial;
    const PoseDiT<float> model = train_variant(config, spec, train_set, &row.training);
    row.metrics = evaluate_model(model, eval_set, derive_seed(config.seed, "eval"), config.metrics, boxes_only).mean;
    if (progress) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "variant '%s': IoU-B %.4f, loss %.4f -> %.4f", spec.name.c_str(),
                    row.metrics.iou_b.value_or(-1.0), row.training.initial_epoch_mean, row.training.final_epoch_mean);
      progress(buf);
    }
    report.rows.push_back(std::move(row));
  }
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

json to_json(const ExperimentReport& r) {
  json rows = json::array();
  for (const VariantResult& v : r.rows) {
    rows.push_back({{"variant", v.spec.name},
                    {"flags",
                     {{"disable_gsa", v.spec.flags.disable_gsa},
                      {"disable_lsa", v.spec.flags.disable_lsa},
                      {"disable_lca", v.spec.flags.disable_lca}}},
                    {"complete_points", v.spec.complete_points},
                    {"metrics", to_json(v.metrics)},
                    {"training",
                     {{"initial_epoch_mean", v.training.initial_epoch_mean},
                      {"final_epoch_mean", v.training.final_epoch_mean},
                      {"steps", v.training.steps},
                      {"seconds", v.training.seconds}}}});
  }
  return {{"config", r.config},
          {"dataset_fingerprint", r.dataset_fingerprint},
          {"rows", rows},
          {"baseline", to_json(r.baseline)},
          {"seeds", r.seeds},
          {"wall_clock_seconds", r.wall_clock_seconds}};
}

ExperimentReport experiment_from_json(const json& doc) {
  try {
    ExperimentReport r;
    r.config = doc.at("config");
    r.dataset_fingerprint = doc.at("dataset_fingerprint").get<std::string>();
    for (const json& row : doc.at("rows")) {
      VariantResult v;
      v.spec.name = row.at("variant").get<std::string>();
      v.spec.flags.disable_gsa = row.at("flags").at("disable_gsa").get<bool>();
      v.spec.flags.disable_lsa = row.at("flags").at("disable_lsa").get<bool>();
      v.spec.flags.disable_lca = row.at("flags").at("disable_lca").get<bool>();
      v.spec.complete_points = row.at("complete_points").get<bool>();
      v.metrics = metrics_from_json(row.at("metrics"));
      v.training.initial_epoch_mean = row.at("training").at("initial_epoch_mean").get<double>();
      v.training.final_epoch_mean = row.at("training").at("final_epoch_mean").get<double>();
      v.training.steps = row.at("training").at("steps").get<int>();
      v.training.seconds = row.at("training").at("seconds").get<double>();
      r.rows.push_back(std::move(v));
    }
    r.baseline = metrics_from_json(doc.at("baseline"));
    r.seeds = doc.at("seeds").get<std::map<std::string, std::uint64_t>>();
    r.wall_clock_seconds = doc.at("wall_clock_seconds").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::Validation, std::string("experiment report: ") + e.what());
  }
}

std::string render_markdown(const ExperimentReport& r) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  auto line = [&](const std::string& name, const MetricsReport& m) {
    return "| " + name + " | " + cell(m.cd_s) + " | " + cell(m.fscore_s) + " | " + cell(m.cd_o) + " | " +
           cell(m.fscore_o) + " | " + cell(m.iou_b) + " | " + cell(m.volume_iou) + " |\n";
  };
  std::string out = "# Ablation report\n\n";
  out += "Dataset fingerprint: `" + r.dataset_fingerprint + "`\n\n";
  const MetricsReport& ref = r.rows.empty() ? r.baseline : r.rows.front().metrics;
  char buf[160];
  std::snprintf(buf, sizeof buf, "F-Score threshold %.3g, volume resolution %d, boxes %s.\n\n", ref.fscore_tau,
                ref.voxel_resolution, ref.box_convention.c_str());
  out += buf;
  out += "| Variant | CD-S | F-Score-S | CD-O | F-Score-O | IoU-B | Volume IoU |\n";
  out += "|---|---|---|---|---|---|---|\n";
  for (const VariantResult& v : r.rows) out += line(v.spec.name, v.metrics);
  out += line("random poses", r.baseline);
  std::snprintf(buf, sizeof buf, "\nWall clock: %.1f s\n", r.wall_clock_seconds);
  out += buf;
  return out;
}

}  // namespace scenemaker

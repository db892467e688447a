// scenemaker: dataset generation, training, sampling, evaluation and the
// ablation experiment from the command line.
//
// Exit codes: 0 success, 1 user error (bad config, bad input files),
// 2 internal error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "scenemaker/config.hpp"
#include "scenemaker/deocc.hpp"
#include "scenemaker/errors.hpp"
#include "scenemaker/io.hpp"
#include "scenemaker/pipeline.hpp"
#include "scenemaker/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scenemaker;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. training.steps=500")->take_all();
  cmd->add_option("--seed", c.seed, "Global seed (overrides config and SCENEMAKER_SEED)");
  cmd->add_flag("-q,--quiet", c.quiet, "No progress output");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? default_run_config() : load_run_config(c.config_path);
  for (const std::string& o : c.overrides) apply_override(cfg, o);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void note(const Common& c, const std::string& msg) {
  if (!c.quiet) std::cerr << msg << '\n';
}

std::uint64_t eval_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, "eval"); }

int cmd_dataset_gen(const Common& c, const fs::path& out, std::optional<int> scenes, const std::string& split) {
  RunConfig cfg = resolve(c);
  const int count = scenes.value_or(cfg.dataset.scenes);
  cfg.dataset.scenes = count;
  const DatasetInfo info = write_dataset(out, cfg.dataset, cfg.seed, split, count);
  note(c, "wrote " + std::to_string(info.scenes.size()) + " scenes to " + out.string() + " (fingerprint " +
              info.fingerprint + ")");
  return 0;
}

int cmd_deocc_gen(const Common& c, const fs::path& out, std::optional<int> count) {
  const RunConfig cfg = resolve(c);
  const int n = count.value_or(cfg.deocc.count);
  if (n < 1) throw ConfigError("deocc.count must be at least 1");
  std::vector<SyntheticTarget> targets;
  for (int i = 0; i < n; ++i) {
    targets.push_back(synthesize_target(derive_seed(cfg.seed, "deocc/target/" + std::to_string(i)), cfg.deocc.image_size));
  }
  TripletSettings settings{cfg.deocc.mix, cfg.deocc.prompt_template, cfg.deocc.bounds, cfg.deocc.resize};
  const std::vector<DeoccTriplet> triplets = assemble_triplets(targets, settings, derive_seed(cfg.seed, "deocc/triplets"));
  write_triplets(out, triplets);
  note(c, "wrote " + std::to_string(triplets.size()) + " triplets to " + out.string());
  return 0;
}

int cmd_train(const Common& c, const fs::path& data, const fs::path& out, bool complete) {
  const RunConfig cfg = resolve(c);
  DatasetInfo info;
  note(c, "preparing " + data.string());
  const std::vector<PreparedScene> scenes = load_prepared(data, cfg.conditioning, complete, &info);
  const VariantSpec spec{"train", cfg.model.ablation, complete};
  TrainResult result;
  const int every = std::max(1, cfg.training.steps / 20);
  const PoseDiT<float> model = train_variant(cfg, spec, scenes, &result, [&](int step, double loss, double lr) {
    if (step % every == 0) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "step %d loss %.5f lr %.2e", step, loss, lr);
      note(c, buf);
    }
  });
  json extra = {{"complete_points", complete},
                {"dataset_fingerprint", info.fingerprint},
                {"run_config", to_json(cfg)},
                {"initial_epoch_mean", result.initial_epoch_mean},
                {"final_epoch_mean", result.final_epoch_mean},
                {"steps_per_epoch", result.steps_per_epoch}};
  write_checkpoint(out, model.config(), model.parameters(), extra);
  std::string curve = "step,loss,learning_rate\n";
  for (std::size_t s = 0; s < result.loss.size(); ++s) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", s, result.loss[s], learning_rate_at(static_cast<int>(s), cfg.training));
    curve += buf;
  }
  fs::path curve_path = out;
  curve_path += ".loss.csv";
  write_file(curve_path, curve);
  char buf[160];
  std::snprintf(buf, sizeof buf, "loss %.5f -> %.5f (epoch means) in %.1f s", result.initial_epoch_mean,
                result.final_epoch_mean, result.seconds);
  note(c, buf);
  return 0;
}

PoseDiT<float> load_model(const fs::path& stem, bool* complete) {
  const Checkpoint ckpt = read_checkpoint(stem);
  PoseDiT<float> model(ckpt.config);
  load_parameters(model.parameters(), ckpt.params);
  if (complete) *complete = ckpt.extra.value("complete_points", false);
  return model;
}

int cmd_sample(const Common& c, const fs::path& data, const fs::path& checkpoint, const fs::path& out, bool ground_truth,
               int steps) {
  const RunConfig cfg = resolve(c);
  std::map<std::string, ScenePrediction> predictions;
  if (ground_truth) {
    const DatasetInfo info = read_dataset_index(data);
    for (const std::string& id : info.scenes) {
      const SceneSample scene = read_scene(data / id);
      ScenePrediction p;
      p.poses = scene.poses();
      p.size_clamped.assign(p.poses.size(), false);
      p.rotation_fallback.assign(p.poses.size(), false);
      predictions.emplace(id, std::move(p));
    }
  } else {
    if (checkpoint.empty()) throw ConfigError("sample needs --checkpoint (or --ground-truth)");
    bool complete = false;
    const PoseDiT<float> model = load_model(checkpoint, &complete);
    const std::vector<PreparedScene> scenes = load_prepared(data, cfg.conditioning, complete);
    std::vector<ScenePrediction> preds(scenes.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      preds[i] = predict_scene(model, scenes[i], derive_seed(eval_seed(cfg), "sample/" + scenes[i].scene_id), steps);
    }
    for (std::size_t i = 0; i < scenes.size(); ++i) predictions.emplace(scenes[i].scene_id, std::move(preds[i]));
  }
  write_predictions(out, predictions);
  note(c, "wrote predictions for " + std::to_string(predictions.size()) + " scenes to " + out.string());
  return 0;
}

int cmd_eval(const Common& c, const fs::path& data, const fs::path& predictions_path, const fs::path& out,
             bool boxes_only) {
  const RunConfig cfg = resolve(c);
  const std::map<std::string, ScenePrediction> predictions = read_predictions(predictions_path);
  const std::vector<PreparedScene> scenes = load_prepared(data, cfg.conditioning, false);
  std::vector<MetricsReport> reports(scenes.size());
  for (const PreparedScene& s : scenes) {
    if (!predictions.count(s.scene_id)) throw ConfigError("no prediction for scene " + s.scene_id);
  }
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    reports[i] = evaluate_prepared(scenes[i], predictions.at(scenes[i].scene_id).poses, cfg.metrics, boxes_only);
  }
  MetricsReport mean = mean_report(reports);
  mean.fscore_tau = cfg.metrics.fscore_tau;
  mean.voxel_resolution = cfg.metrics.voxel_resolution;
  json per_scene = json::object();
  for (std::size_t i = 0; i < scenes.size(); ++i) per_scene[scenes[i].scene_id] = to_json(reports[i]);
  write_json(out, {{"mean", to_json(mean)}, {"scenes", per_scene}});
  if (mean.iou_b) note(c, "IoU-B " + std::to_string(*mean.iou_b));
  return 0;
}

int cmd_ablate(const Common& c, const fs::path& out, bool boxes_only) {
  const RunConfig cfg = resolve(c);
  note(c, "synthesizing " + std::to_string(cfg.dataset.scenes) + " training and " + std::to_string(cfg.eval_scenes) +
              " evaluation scenes");
  const PreparedSplit train = synthesize_split(cfg.dataset, cfg.conditioning, cfg.seed, "train", cfg.dataset.scenes, true);
  const PreparedSplit eval = synthesize_split(cfg.dataset, cfg.conditioning, cfg.seed, "eval", cfg.eval_scenes, true);
  const ExperimentReport report = run_ablation(cfg, train, eval, boxes_only, [&](const std::string& m) { note(c, m); });
  write_json(out / "experiment.json", to_json(report));
  write_file(out / "report.md", render_markdown(report));
  std::cout << render_markdown(report);
  return 0;
}

int cmd_report(const fs::path& experiment, const fs::path& out) {
  const ExperimentReport report = experiment_from_json(read_json(experiment));
  const std::string md = render_markdown(report);
  if (out.empty()) {
    std::cout << md;
  } else {
    write_file(out, md);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-estimation pipeline for procedurally generated tabletop scenes"};
  app.require_subcommand(1);
  Common common;

  CLI::App* dataset = app.add_subcommand("dataset", "Scene datasets");
  dataset->require_subcommand(1);
  CLI::App* dataset_gen = dataset->add_subcommand("gen", "Generate a dataset directory");
  add_common(dataset_gen, common);
  std::string dataset_out, split = "train";
  std::optional<int> scenes;
  dataset_gen->add_option("--out", dataset_out, "Output directory")->required();
  dataset_gen->add_option("--scenes", scenes, "Scene count (default dataset.scenes)");
  dataset_gen->add_option("--split", split, "Split name; each split has its own seed stream");

  CLI::App* deocc = app.add_subcommand("deocc", "De-occlusion triplets");
  deocc->require_subcommand(1);
  CLI::App* deocc_gen = deocc->add_subcommand("gen", "Generate a triplet set");
  add_common(deocc_gen, common);
  std::string deocc_out;
  std::optional<int> deocc_count;
  deocc_gen->add_option("--out", deocc_out, "Output directory")->required();
  deocc_gen->add_option("--count", deocc_count, "Triplet count (default deocc.count)");

  CLI::App* train = app.add_subcommand("train", "Train the pose model");
  add_common(train, common);
  std::string data, train_out;
  bool complete = false;
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--out", train_out, "Checkpoint stem (writes .json, .bin and .loss.csv)")->required();
  train->add_flag("--complete-points", complete, "Condition on full posed clouds instead of visible points");

  CLI::App* sample = app.add_subcommand("sample", "Predict poses for every scene of a dataset");
  add_common(sample, common);
  std::string checkpoint, sample_out;
  bool ground_truth = false;
  int steps = 0;
  sample->add_option("--data", data, "Dataset directory")->required();
  sample->add_option("--checkpoint", checkpoint, "Checkpoint stem");
  sample->add_option("--out", sample_out, "Predictions file")->required();
  sample->add_option("--steps", steps, "Euler steps (default model.sampling_steps)");
  sample->add_flag("--ground-truth", ground_truth, "Emit the ground-truth poses instead of sampling");

  CLI::App* eval = app.add_subcommand("eval", "Score predictions against a dataset");
  add_common(eval, common);
  std::string predictions, eval_out;
  bool boxes_only = false;
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--predictions", predictions, "Predictions file")->required();
  eval->add_option("--out", eval_out, "Metrics report file")->required();
  eval->add_flag("--boxes-only", boxes_only, "Only IoU-B");

  CLI::App* ablate = app.add_subcommand("ablate", "Train and evaluate the five model variants");
  add_common(ablate, common);
  std::string ablate_out;
  ablate->add_option("--out", ablate_out, "Output directory")->required();
  ablate->add_flag("--boxes-only", boxes_only, "Only IoU-B");

  CLI::App* report = app.add_subcommand("report", "Render an experiment report as markdown");
  std::string experiment, report_out;
  report->add_option("--experiment", experiment, "experiment.json from ablate")->required();
  report->add_option("--out", report_out, "Markdown file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (dataset_gen->parsed()) return cmd_dataset_gen(common, dataset_out, scenes, split);
    if (deocc_gen->parsed()) return cmd_deocc_gen(common, deocc_out, deocc_count);
    if (train->parsed()) return cmd_train(common, data, train_out, complete);
    if (sample->parsed()) return cmd_sample(common, data, checkpoint, sample_out, ground_truth, steps);
    if (eval->parsed()) return cmd_eval(common, data, predictions, eval_out, boxes_only);
    if (ablate->parsed()) return cmd_ablate(common, ablate_out, boxes_only);
    if (report->parsed()) return cmd_report(experiment, report_out);
  } catch (const InternalError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}

#include "scenemaker/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "scenemaker/errors.hpp"
#include "scenemaker/rng.hpp"

namespace scenemaker {

using nlohmann::json;

namespace {

// Reads keys out of one JSON object, remembering which ones were consumed
// so leftovers can be reported by their dotted path.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError("config key '" + display() + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    const auto it = doc_.find(key);
    if (it == doc_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + full(key) + "' has the wrong type");
    }
  }

  void require(const char* key) const {
    if (!doc_.contains(key)) throw ConfigError("missing required config key '" + full(key) + "'");
  }

  const json* child(const char* key) {
    used_.insert(key);
    const auto it = doc_.find(key);
    return it == doc_.end() ? nullptr : &*it;
  }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : doc_.items()) {
      if (!used_.count(k)) throw ConfigError("unknown config key '" + full(k) + "'");
    }
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& doc_;
  std::string path_;
  std::set<std::string> used_;
};

Vec3 vec3_from(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("config key '" + key + "' must be a 3-element array");
  try {
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' must hold numbers");
  }
}

void read_dataset(const json& doc, DatasetConfig& c) {
  Section s(doc, "dataset");
  s.get("scenes", c.scenes);
  s.get("min_objects", c.min_objects);
  s.get("max_objects", c.max_objects);
  s.get("points_per_object", c.points_per_object);
  if (const json* w = s.child("shape_weights")) {
    Section ws(*w, "dataset.shape_weights");
    for (std::size_t i = 0; i < kAllShapeKinds.size(); ++i) {
      ws.get(std::string(shape_kind_name(kAllShapeKinds[i])).c_str(), c.shape_weights[i]);
    }
    ws.finish();
  }
  if (const json* l = s.child("layout")) {
    Section ls(*l, "dataset.layout");
    ls.get("max_objects", c.layout.max_objects);
    ls.get("xy_min", c.layout.xy_min);
    ls.get("xy_max", c.layout.xy_max);
    ls.get("size_min", c.layout.size_min);
    ls.get("size_max", c.layout.size_max);
    ls.get("size_jitter", c.layout.size_jitter);
    ls.get("pitch_range_deg", c.layout.pitch_range_deg);
    ls.get("rejection_budget", c.layout.rejection_budget);
    ls.finish();
  }
  if (const json* cam = s.child("camera")) {
    Section cs(*cam, "dataset.camera");
    cs.get("elevation_min_deg", c.camera.elevation_min_deg);
    cs.get("elevation_max_deg", c.camera.elevation_max_deg);
    cs.get("radius_min", c.camera.radius_min);
    cs.get("radius_max", c.camera.radius_max);
    if (const json* la = cs.child("look_at")) c.camera.look_at = vec3_from(*la, "dataset.camera.look_at");
    cs.get("resolution", c.camera.resolution);
    cs.get("fov_deg", c.camera.fov_deg);
    cs.finish();
  }
  if (const json* r = s.child("render")) {
    Section rs(*r, "dataset.render");
    rs.get("depth_tolerance", c.render.depth_tolerance);
    rs.get("depth_noise", c.render.depth_noise);
    rs.finish();
  }
  s.finish();
}

void read_model(const json& doc, DiTConfig& c, const std::string& path) {
  Section s(doc, path);
  s.get("width", c.width);
  s.get("heads", c.heads);
  s.get("blocks", c.blocks);
  s.get("point_hidden", c.point_hidden);
  s.get("ffn_multiplier", c.ffn_multiplier);
  s.get("k_local", c.k_local);
  s.get("k_global", c.k_global);
  s.get("sampling_steps", c.sampling_steps);
  s.get("rope_base", c.rope_base);
  s.get("seed", c.seed);
  if (const json* a = s.child("ablation")) {
    Section as(*a, path + ".ablation");
    as.get("disable_gsa", c.ablation.disable_gsa);
    as.get("disable_lsa", c.ablation.disable_lsa);
    as.get("disable_lca", c.ablation.disable_lca);
    as.finish();
  }
  s.finish();
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  RunConfig c;
  Section root(doc, "");
  root.require("seed");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  root.get("eval_scenes", c.eval_scenes);
  if (const json* d = root.child("dataset")) read_dataset(*d, c.dataset);
  if (const json* m = root.child("model")) read_model(*m, c.model, "model");
  if (const json* t = root.child("training")) {
    Section s(*t, "training");
    s.get("steps", c.training.steps);
    s.get("batch_size", c.training.batch_size);
    s.get("learning_rate", c.training.learning_rate);
    s.get("warmup_steps", c.training.warmup_steps);
    s.get("final_lr_fraction", c.training.final_lr_fraction);
    s.get("grad_clip", c.training.grad_clip);
    s.get("weight_decay", c.training.weight_decay);
    s.finish();
  }
  if (const json* t = root.child("conditioning")) {
    Section s(*t, "conditioning");
    s.get("geometry_points", c.conditioning.geometry_points);
    s.get("local_points", c.conditioning.local_points);
    s.get("global_points", c.conditioning.global_points);
    s.get("eval_points", c.conditioning.eval_points);
    s.finish();
  }
  if (const json* t = root.child("metrics")) {
    Section s(*t, "metrics");
    s.get("fscore_tau", c.metrics.fscore_tau);
    s.get("voxel_resolution", c.metrics.voxel_resolution);
    s.finish();
  }
  if (const json* t = root.child("deocc")) {
    Section s(*t, "deocc");
    s.get("count", c.deocc.count);
    s.get("image_size", c.deocc.image_size);
    s.get("prompt_template", c.deocc.prompt_template);
    s.get("resize", c.deocc.resize);
    if (const json* m = s.child("mix")) {
      Section ms(*m, "deocc.mix");
      ms.get("cutout", c.deocc.mix.cutout);
      ms.get("border", c.deocc.mix.border);
      ms.get("brush", c.deocc.mix.brush);
      ms.finish();
    }
    if (const json* b = s.child("coverage")) {
      Section bs(*b, "deocc.coverage");
      bs.get("min", c.deocc.bounds.min);
      bs.get("max", c.deocc.bounds.max);
      bs.finish();
    }
    s.finish();
  }
  root.finish();

  validate(c.dataset);
  validate(c.model);
  if (c.eval_scenes < 1) throw ConfigError("config key 'eval_scenes' must be at least 1");
  if (c.training.steps < 1 || c.training.batch_size < 1) throw ConfigError("config keys 'training.steps' and 'training.batch_size' must be positive");
  if (!(c.training.learning_rate > 0)) throw ConfigError("config key 'training.learning_rate' must be positive");
  if (c.conditioning.geometry_points < 1 || c.conditioning.local_points < 1 || c.conditioning.global_points < 1 ||
      c.conditioning.eval_points < 1) {
    throw ConfigError("conditioning point budgets must be positive");
  }
  if (!(c.metrics.fscore_tau > 0)) throw ConfigError("config key 'metrics.fscore_tau' must be positive");
  if (c.metrics.voxel_resolution < 8) throw ConfigError("config key 'metrics.voxel_resolution' must be at least 8");
  if (!(c.deocc.bounds.min >= 0 && c.deocc.bounds.max <= 1 && c.deocc.bounds.min < c.deocc.bounds.max)) {
    throw ConfigError("config key 'deocc.coverage' must satisfy 0 <= min < max <= 1");
  }
  if (c.deocc.image_size < 16) throw ConfigError("config key 'deocc.image_size' must be at least 16");
  return c;
}

json to_json(const DatasetConfig& c) {
  json weights = json::object();
  for (std::size_t i = 0; i < kAllShapeKinds.size(); ++i) weights[std::string(shape_kind_name(kAllShapeKinds[i]))] = c.shape_weights[i];
  return {{"scenes", c.scenes},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"points_per_object", c.points_per_object},
          {"shape_weights", weights},
          {"layout",
           {{"max_objects", c.layout.max_objects},
            {"xy_min", c.layout.xy_min},
            {"xy_max", c.layout.xy_max},
            {"size_min", c.layout.size_min},
            {"size_max", c.layout.size_max},
            {"size_jitter", c.layout.size_jitter},
            {"pitch_range_deg", c.layout.pitch_range_deg},
            {"rejection_budget", c.layout.rejection_budget}}},
          {"camera",
           {{"elevation_min_deg", c.camera.elevation_min_deg},
            {"elevation_max_deg", c.camera.elevation_max_deg},
            {"radius_min", c.camera.radius_min},
            {"radius_max", c.camera.radius_max},
            {"look_at", {c.camera.look_at.x(), c.camera.look_at.y(), c.camera.look_at.z()}},
            {"resolution", c.camera.resolution},
            {"fov_deg", c.camera.fov_deg}}},
          {"render", {{"depth_tolerance", c.render.depth_tolerance}, {"depth_noise", c.render.depth_noise}}}};
}

json to_json(const DiTConfig& c) {
  return {{"width", c.width},
          {"heads", c.heads},
          {"blocks", c.blocks},
          {"point_hidden", c.point_hidden},
          {"ffn_multiplier", c.ffn_multiplier},
          {"k_local", c.k_local},
          {"k_global", c.k_global},
          {"sampling_steps", c.sampling_steps},
          {"rope_base", c.rope_base},
          {"seed", c.seed},
          {"ablation",
           {{"disable_gsa", c.ablation.disable_gsa},
            {"disable_lsa", c.ablation.disable_lsa},
            {"disable_lca", c.ablation.disable_lca}}}};
}

DiTConfig dit_config_from_json(const json& doc) {
  DiTConfig c;
  read_model(doc, c, "model");
  validate(c);
  return c;
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"output_dir", c.output_dir},
          {"eval_scenes", c.eval_scenes},
          {"dataset", to_json(c.dataset)},
          {"model", to_json(c.model)},
          {"training",
           {{"steps", c.training.steps},
            {"batch_size", c.training.batch_size},
            {"learning_rate", c.training.learning_rate},
            {"warmup_steps", c.training.warmup_steps},
            {"final_lr_fraction", c.training.final_lr_fraction},
            {"grad_clip", c.training.grad_clip},
            {"weight_decay", c.training.weight_decay}}},
          {"conditioning",
           {{"geometry_points", c.conditioning.geometry_points},
            {"local_points", c.conditioning.local_points},
            {"global_points", c.conditioning.global_points},
            {"eval_points", c.conditioning.eval_points}}},
          {"metrics", {{"fscore_tau", c.metrics.fscore_tau}, {"voxel_resolution", c.metrics.voxel_resolution}}},
          {"deocc",
           {{"count", c.deocc.count},
            {"image_size", c.deocc.image_size},
            {"prompt_template", c.deocc.prompt_template},
            {"resize", c.deocc.resize},
            {"mix", {{"cutout", c.deocc.mix.cutout}, {"border", c.deocc.mix.border}, {"brush", c.deocc.mix.brush}}},
            {"coverage", {{"min", c.deocc.bounds.min}, {"max", c.deocc.bounds.max}}}}}};
}

void apply_seed_env(RunConfig& config) {
  const char* env = std::getenv(kSeedEnvVar);
  if (!env || !*env) return;
  const std::string s = env;
  if (s.find_first_not_of("0123456789") != std::string::npos || s.size() > 20) {
    throw ConfigError(std::string(kSeedEnvVar) + " must be an unsigned integer, got '" + s + "'");
  }
  try {
    config.seed = std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError(std::string(kSeedEnvVar) + " is out of range: '" + s + "'");
  }
}

RunConfig default_run_config() {
  RunConfig c;
  apply_seed_env(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError(FormatError::Kind::Io, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    throw FormatError(FormatError::Kind::Parse, "config " + path.string() + ": " + e.what());
  }
  RunConfig c = parse_run_config(doc);
  apply_seed_env(c);
  return c;
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key.path=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json doc = to_json(config);
  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[parts[i]];
  }
  *node = value;
  config = parse_run_config(doc);
}

DiTConfig model_config(const RunConfig& config) {
  DiTConfig m = config.model;
  // model.seed salts the run seed rather than replacing it.
  m.seed = derive_seed(config.seed, "model/" + std::to_string(config.model.seed));
  return m;
}

}  // namespace scenemaker

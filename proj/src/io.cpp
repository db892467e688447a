#include "scenemaker/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "scenemaker/config.hpp"
#include "scenemaker/errors.hpp"
#include "scenemaker/rng.hpp"

namespace scenemaker {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kCloudMagic[4] = {'P', 'C', 'B', '1'};

FormatError invalid(const std::string& where, const std::string& what) {
  return FormatError(FormatError::Kind::Validation, where + ": " + what);
}

// Runs `f`, turning JSON access errors into validation errors.
template <typename F>
auto guarded(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw invalid(where, e.what());
  } catch (const ConfigError& e) {
    throw invalid(where, e.what());
  }
}

std::uint32_t read_u32(std::string_view bytes, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + at, 4);
  return v;
}

json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw invalid(where, "expected 3 numbers");
  Vec3 v;
  for (int k = 0; k < 3; ++k) {
    if (!j[static_cast<std::size_t>(k)].is_number()) throw invalid(where, "expected 3 numbers");
    v[k] = j[static_cast<std::size_t>(k)].get<double>();
    if (!std::isfinite(v[k])) throw invalid(where, "non-finite value");
  }
  return v;
}

std::string cloud_name(int index, const char* what) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "object_%02d_%s.pcb", index, what);
  return buf;
}

std::string hex64(std::uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::string encode_point_cloud(const PointCloud& cloud) {
  if (cloud.size() > 0xffffffffu) throw ConfigError("point cloud too large for the PCB1 format");
  std::string out(8 + cloud.size() * 12, '\0');
  std::memcpy(out.data(), kCloudMagic, 4);
  const auto n = static_cast<std::uint32_t>(cloud.size());
  std::memcpy(out.data() + 4, &n, 4);
  char* p = out.data() + 8;
  for (const Vec3& v : cloud) {
    for (int k = 0; k < 3; ++k) {
      const float f = static_cast<float>(v[k]);
      std::memcpy(p, &f, 4);
      p += 4;
    }
  }
  return out;
}

PointCloud decode_point_cloud(std::string_view bytes, const std::string& source) {
  if (bytes.size() < 4) throw FormatError(FormatError::Kind::Truncated, source + ": shorter than the magic");
  if (std::memcmp(bytes.data(), kCloudMagic, 4) != 0) throw FormatError(FormatError::Kind::BadMagic, source + ": expected PCB1");
  if (bytes.size() < 8) throw FormatError(FormatError::Kind::Truncated, source + ": missing point count");
  const std::uint32_t n = read_u32(bytes, 4);
  const std::size_t expected = 8 + static_cast<std::size_t>(n) * 12;
  if (bytes.size() < expected) {
    throw FormatError(FormatError::Kind::Truncated, source + ": " + std::to_string(n) + " points need " +
                                                        std::to_string(expected) + " bytes, have " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw FormatError(FormatError::Kind::ShapeMismatch, source + ": " + std::to_string(bytes.size() - expected) + " trailing bytes");
  }
  PointCloud cloud(n);
  const char* p = bytes.data() + 8;
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      float f;
      std::memcpy(&f, p, 4);
      p += 4;
      if (!std::isfinite(f)) throw invalid(source, "non-finite coordinate at point " + std::to_string(i));
      cloud[i][k] = f;
    }
  }
  return cloud;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw FormatError(FormatError::Kind::Io, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError(FormatError::Kind::Io, "failed writing " + path.string());
}

void write_point_cloud(const fs::path& path, const PointCloud& cloud) { write_file(path, encode_point_cloud(cloud)); }

PointCloud read_point_cloud(const fs::path& path) { return decode_point_cloud(read_file(path), path.string()); }

void write_json(const fs::path& path, const json& doc) { write_file(path, doc.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(FormatError::Kind::Parse, path.string() + ": " + e.what());
  }
}

json pose_to_json(const Pose& pose) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rot.push_back(pose.rotation(r, c));
  }
  return {{"rotation_matrix", rot}, {"translation", vec_json(pose.translation)}, {"size", vec_json(pose.size)}};
}

Pose pose_from_json(const json& doc, const std::string& where) {
  return guarded(where, [&] {
    Pose p;
    const json& rot = doc.at("rotation_matrix");
    if (!rot.is_array() || rot.size() != 9) throw invalid(where, "rotation_matrix must hold 9 numbers");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        const json& v = rot[static_cast<std::size_t>(3 * r + c)];
        if (!v.is_number()) throw invalid(where, "rotation_matrix must hold 9 numbers");
        p.rotation(r, c) = v.get<double>();
      }
    }
    if (!p.rotation.allFinite() || !is_rotation(p.rotation, 1e-4)) {
      throw invalid(where, "rotation_matrix is not orthonormal with determinant +1 (tolerance 1e-4)");
    }
    p.translation = vec_from(doc.at("translation"), where + ".translation");
    p.size = vec_from(doc.at("size"), where + ".size");
    if (!(p.size.minCoeff() > 0)) throw invalid(where, "size must be positive");
    return p;
  });
}

json scene_manifest(const SceneSample& scene) {
  json objects = json::array();
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const ObjectSample& o = scene.objects[i];
    const int idx = static_cast<int>(i);
    objects.push_back({{"index", idx},
                       {"class", std::string(shape_kind_name(o.shape.kind))},
                       {"shape_params", o.shape.params},
                       {"sample_count", o.shape.sample_count},
                       {"pose", pose_to_json(o.pose)},
                       {"augmentation", {{"yaw_deg", o.augmentation.yaw_deg}, {"pitch_deg", o.augmentation.pitch_deg}}},
                       {"files",
                        {{"canonical", cloud_name(idx, "canonical")},
                         {"partial", cloud_name(idx, "partial")},
                         {"partial_normalized", o.partial_normalized ? json(cloud_name(idx, "partial_normalized")) : json(nullptr)}}},
                       {"visibility", o.visibility},
                       {"occluded", o.occluded}});
  }
  return {{"scene_id", scene.scene_id},
          {"seed", scene.seed},
          {"normalization", {{"center", vec_json(scene.normalization.center)}, {"scale", scene.normalization.scale}}},
          {"camera",
           {{"elevation_deg", scene.camera.elevation_deg},
            {"azimuth_deg", scene.camera.azimuth_deg},
            {"radius", scene.camera.radius},
            {"resolution", scene.camera.resolution},
            {"fov_deg", scene.camera.fov_deg},
            {"look_at", vec_json(scene.camera.look_at)}}},
          {"objects", objects}};
}

void write_scene(const fs::path& dir, const SceneSample& scene) {
  const json manifest = scene_manifest(scene);
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const ObjectSample& o = scene.objects[i];
    const json& files = manifest["objects"][i]["files"];
    write_point_cloud(dir / files["canonical"].get<std::string>(), o.canonical);
    write_point_cloud(dir / files["partial"].get<std::string>(), o.partial);
    if (o.partial_normalized) write_point_cloud(dir / files["partial_normalized"].get<std::string>(), *o.partial_normalized);
  }
  write_json(dir / "manifest.json", manifest);
}

SceneSample read_scene(const fs::path& dir) {
  const json m = read_json(dir / "manifest.json");
  const std::string where = (dir / "manifest.json").string();
  return guarded(where, [&] {
    SceneSample s;
    s.scene_id = m.at("scene_id").get<std::string>();
    s.seed = m.at("seed").get<std::uint64_t>();
    s.normalization.center = vec_from(m.at("normalization").at("center"), where + " normalization.center");
    s.normalization.scale = m.at("normalization").at("scale").get<double>();
    if (!(s.normalization.scale > 0) || !std::isfinite(s.normalization.scale)) throw invalid(where, "normalization scale must be positive");
    const json& cam = m.at("camera");
    s.camera.elevation_deg = cam.at("elevation_deg").get<double>();
    s.camera.azimuth_deg = cam.at("azimuth_deg").get<double>();
    s.camera.radius = cam.at("radius").get<double>();
    s.camera.resolution = cam.at("resolution").get<int>();
    s.camera.fov_deg = cam.at("fov_deg").get<double>();
    s.camera.look_at = vec_from(cam.at("look_at"), where + " camera.look_at");
    const json& objects = m.at("objects");
    if (!objects.is_array() || objects.empty()) throw invalid(where, "objects must be a non-empty array");
    for (std::size_t i = 0; i < objects.size(); ++i) {
      const json& o = objects[i];
      const std::string ow = where + " objects[" + std::to_string(i) + "]";
      if (o.at("index").get<int>() != static_cast<int>(i)) throw invalid(ow, "object index out of order");
      ObjectSample obj;
      obj.shape.kind = shape_kind_from_name(o.at("class").get<std::string>());
      obj.shape.params = o.at("shape_params").get<std::vector<double>>();
      obj.shape.sample_count = o.at("sample_count").get<int>();
      validate(obj.shape);
      obj.pose = pose_from_json(o.at("pose"), ow + ".pose");
      obj.augmentation.yaw_deg = o.at("augmentation").at("yaw_deg").get<double>();
      obj.augmentation.pitch_deg = o.at("augmentation").at("pitch_deg").get<double>();
      obj.visibility = o.at("visibility").get<double>();
      obj.occluded = o.at("occluded").get<bool>();
      if (!(obj.visibility >= 0 && obj.visibility <= 1)) throw invalid(ow, "visibility outside [0, 1]");
      const json& files = o.at("files");
      obj.canonical = read_point_cloud(dir / files.at("canonical").get<std::string>());
      obj.partial = read_point_cloud(dir / files.at("partial").get<std::string>());
      if (!files.at("partial_normalized").is_null()) {
        obj.partial_normalized = read_point_cloud(dir / files.at("partial_normalized").get<std::string>());
      }
      if (obj.canonical.empty()) throw invalid(ow, "empty canonical cloud");
      if (obj.occluded != obj.partial.empty()) throw invalid(ow, "occluded flag disagrees with the partial cloud");
      if (obj.partial_normalized.has_value() == obj.partial.empty()) throw invalid(ow, "normalized partial cloud presence mismatch");
      s.objects.push_back(std::move(obj));
    }
    return s;
  });
}

std::string dataset_fingerprint(const std::vector<json>& manifests) {
  std::uint64_t h = fnv1a64("");
  for (const json& m : manifests) h = fnv1a64(m.dump(), h);
  return hex64(h);
}

void write_dataset_index(const fs::path& dir, const DatasetInfo& info) {
  write_json(dir / "dataset.json", {{"format_version", kDatasetFormatVersion},
                                    {"seed", info.seed},
                                    {"config", info.config},
                                    {"scenes", info.scenes},
                                    {"fingerprint", info.fingerprint}});
}

DatasetInfo read_dataset_index(const fs::path& dir) {
  const json doc = read_json(dir / "dataset.json");
  const std::string where = (dir / "dataset.json").string();
  return guarded(where, [&] {
    const int version = doc.at("format_version").get<int>();
    if (version != kDatasetFormatVersion) {
      throw FormatError(FormatError::Kind::Version, where + ": dataset format version " + std::to_string(version) +
                                                        ", this build reads version " + std::to_string(kDatasetFormatVersion));
    }
    DatasetInfo info;
    info.seed = doc.at("seed").get<std::uint64_t>();
    info.config = doc.at("config");
    info.scenes = doc.at("scenes").get<std::vector<std::string>>();
    info.fingerprint = doc.at("fingerprint").get<std::string>();
    return info;
  });
}

void write_checkpoint(const fs::path& stem, const DiTConfig& config, const nn::ParameterSet<float>& params,
                      const json& extra) {
  json tensors = json::array();
  std::string payload;
  payload.reserve(params.scalar_count() * 4);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const nn::Matrix<float>& m = params[i];
    tensors.push_back({{"name", params.name(i)}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}});
    payload.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * 4);
    offset += static_cast<std::size_t>(m.size());
  }
  fs::path bin = stem;
  bin += ".bin";
  fs::path manifest = stem;
  manifest += ".json";
  write_file(bin, payload);
  write_json(manifest, {{"format_version", kCheckpointFormatVersion},
                        {"config", to_json(config)},
                        {"tensors", tensors},
                        {"payload", bin.filename().string()},
                        {"payload_floats", offset},
                        {"payload_fnv1a64", hex64(fnv1a64(payload))},
                        {"training", extra}});
}

Checkpoint read_checkpoint(const fs::path& stem) {
  fs::path manifest_path = stem;
  manifest_path += ".json";
  const json doc = read_json(manifest_path);
  const std::string where = manifest_path.string();
  return guarded(where, [&] {
    const int version = doc.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw FormatError(FormatError::Kind::Version, where + ": checkpoint format version " + std::to_string(version) +
                                                        ", this build reads version " + std::to_string(kCheckpointFormatVersion));
    }
    Checkpoint ck;
    ck.config = dit_config_from_json(doc.at("config"));
    ck.extra = doc.contains("training") ? doc.at("training") : json::object();
    const std::string payload = read_file(manifest_path.parent_path() / doc.at("payload").get<std::string>());
    const std::size_t floats = doc.at("payload_floats").get<std::size_t>();
    if (payload.size() < floats * 4) {
      throw FormatError(FormatError::Kind::Truncated, where + ": payload has " + std::to_string(payload.size()) +
                                                          " bytes, index needs " + std::to_string(floats * 4));
    }
    if (payload.size() != floats * 4) throw FormatError(FormatError::Kind::ShapeMismatch, where + ": payload size disagrees with the index");
    if (doc.at("payload_fnv1a64").get<std::string>() != hex64(fnv1a64(payload))) throw invalid(where, "payload checksum mismatch");
    std::size_t expected_offset = 0;
    for (const json& t : doc.at("tensors")) {
      const auto shape = t.at("shape").get<std::vector<long long>>();
      if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) throw FormatError(FormatError::Kind::ShapeMismatch, where + ": bad tensor shape");
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = static_cast<std::size_t>(shape[0] * shape[1]);
      if (offset != expected_offset || offset + count > floats) {
        throw FormatError(FormatError::Kind::ShapeMismatch, where + ": tensor '" + t.at("name").get<std::string>() + "' lies outside the payload");
      }
      expected_offset += count;
      const std::size_t j = ck.params.add(t.at("name").get<std::string>(), shape[0], shape[1]);
      std::memcpy(ck.params[j].data(), payload.data() + offset * 4, count * 4);
      if (!ck.params[j].allFinite()) throw invalid(where, "non-finite weights in '" + ck.params.name(j) + "'");
    }
    if (expected_offset != floats) throw FormatError(FormatError::Kind::ShapeMismatch, where + ": tensors do not cover the payload");
    return ck;
  });
}

void load_parameters(nn::ParameterSet<float>& into, const nn::ParameterSet<float>& from) {
  if (into.size() != from.size()) {
    throw FormatError(FormatError::Kind::ShapeMismatch, "checkpoint has " + std::to_string(from.size()) + " tensors, model has " +
                                                            std::to_string(into.size()));
  }
  for (std::size_t i = 0; i < into.size(); ++i) {
    if (into.name(i) != from.name(i) || into[i].rows() != from[i].rows() || into[i].cols() != from[i].cols()) {
      throw FormatError(FormatError::Kind::ShapeMismatch, "checkpoint tensor '" + from.name(i) + "' does not match model tensor '" +
                                                              into.name(i) + "'");
    }
    into[i] = from[i];
  }
}

void write_predictions(const fs::path& path, const std::map<std::string, ScenePrediction>& predictions) {
  json scenes = json::object();
  for (const auto& [id, p] : predictions) {
    json poses = json::array();
    for (const Pose& pose : p.poses) poses.push_back(pose_to_json(pose));
    scenes[id] = {{"poses", poses}, {"size_clamped", p.size_clamped}, {"rotation_fallback", p.rotation_fallback}};
  }
  write_json(path, {{"format_version", 1}, {"scenes", scenes}});
}

std::map<std::string, ScenePrediction> read_predictions(const fs::path& path) {
  const json doc = read_json(path);
  const std::string where = path.string();
  return guarded(where, [&] {
    if (doc.at("format_version").get<int>() != 1) throw FormatError(FormatError::Kind::Version, where + ": unsupported predictions version");
    std::map<std::string, ScenePrediction> out;
    for (const auto& [id, s] : doc.at("scenes").items()) {
      ScenePrediction p;
      const json& poses = s.at("poses");
      for (std::size_t i = 0; i < poses.size(); ++i) p.poses.push_back(pose_from_json(poses[i], where + " " + id + "[" + std::to_string(i) + "]"));
      p.size_clamped = s.at("size_clamped").get<std::vector<bool>>();
      p.rotation_fallback = s.at("rotation_fallback").get<std::vector<bool>>();
      if (p.size_clamped.size() != p.poses.size() || p.rotation_fallback.size() != p.poses.size()) {
        throw FormatError(FormatError::Kind::ShapeMismatch, where + ": flag lists do not match the pose list for " + id);
      }
      out.emplace(id, std::move(p));
    }
    return out;
  });
}

json to_json(const MetricsReport& r) {
  json objects = json::array();
  for (const ObjectMetrics& o : r.objects) {
    objects.push_back({{"chamfer", opt_json(o.chamfer)},
                       {"fscore", opt_json(o.fscore)},
                       {"iou_b", opt_json(o.iou_b)},
                       {"volume_iou", opt_json(o.volume_iou)}});
  }
  return {{"cd_s", opt_json(r.cd_s)},
          {"fscore_s", opt_json(r.fscore_s)},
          {"cd_o", opt_json(r.cd_o)},
          {"fscore_o", opt_json(r.fscore_o)},
          {"iou_b", opt_json(r.iou_b)},
          {"volume_iou", opt_json(r.volume_iou)},
          {"objects", objects},
          {"thresholds", {{"fscore_tau", r.fscore_tau}, {"voxel_resolution", r.voxel_resolution}}},
          {"box_convention", r.box_convention}};
}

MetricsReport metrics_from_json(const json& doc) {
  return guarded("metrics report", [&] {
    MetricsReport r;
    r.cd_s = opt_from(doc, "cd_s");
    r.fscore_s = opt_from(doc, "fscore_s");
    r.cd_o = opt_from(doc, "cd_o");
    r.fscore_o = opt_from(doc, "fscore_o");
    r.iou_b = opt_from(doc, "iou_b");
    r.volume_iou = opt_from(doc, "volume_iou");
    for (const json& o : doc.at("objects")) {
      r.objects.push_back({opt_from(o, "chamfer"), opt_from(o, "fscore"), opt_from(o, "iou_b"), opt_from(o, "volume_iou")});
    }
    r.fscore_tau = doc.at("thresholds").at("fscore_tau").get<double>();
    r.voxel_resolution = doc.at("thresholds").at("voxel_resolution").get<int>();
    r.box_convention = doc.at("box_convention").get<std::string>();
    return r;
  });
}

}  // namespace scenemaker

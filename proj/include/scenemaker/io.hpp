#pragma once

// On-disk formats. Every reader reports problems as FormatError with a kind
// (bad magic, truncation, shape mismatch, parse, validation, version, I/O).
//
// Point cloud (.pcb):  "PCB1" | u32 LE count | count * 3 f32 LE (x, y, z)
// Scene directory:     manifest.json plus one .pcb per object cloud
// Dataset directory:   dataset.json plus one scene directory per scene
// Checkpoint:          <stem>.json (format_version, config, tensor index with
//                      name/shape/offset, FNV-1a of the payload) and
//                      <stem>.bin (f32 LE payload)
//
// JSON is written with sorted keys and two-space indentation.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "scenemaker/layout.hpp"
#include "scenemaker/metrics.hpp"
#include "scenemaker/nn.hpp"
#include "scenemaker/pose_dit.hpp"

namespace scenemaker {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr int kDatasetFormatVersion = 1;

std::string encode_point_cloud(const PointCloud& cloud);
PointCloud decode_point_cloud(std::string_view bytes, const std::string& source = "point cloud");
void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_point_cloud(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

nlohmann::json pose_to_json(const Pose& pose);
// Validates orthonormality (1e-4), positive sizes and finite values.
Pose pose_from_json(const nlohmann::json& doc, const std::string& where);

// Writes manifest.json and the clouds of one scene into `dir`.
void write_scene(const std::filesystem::path& dir, const SceneSample& scene);
SceneSample read_scene(const std::filesystem::path& dir);

// Manifest only, without touching clouds; used for fingerprints.
nlohmann::json scene_manifest(const SceneSample& scene);

struct DatasetInfo {
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<std::string> scenes;
  std::string fingerprint;
};

void write_dataset_index(const std::filesystem::path& dir, const DatasetInfo& info);
DatasetInfo read_dataset_index(const std::filesystem::path& dir);
// Hex FNV-1a over the sorted scene manifests.
std::string dataset_fingerprint(const std::vector<nlohmann::json>& manifests);

struct Checkpoint {
  DiTConfig config;
  nn::ParameterSet<float> params;
  nlohmann::json extra;  // free-form training record
};

void write_checkpoint(const std::filesystem::path& stem, const DiTConfig& config, const nn::ParameterSet<float>& params,
                      const nlohmann::json& extra = nlohmann::json::object());
Checkpoint read_checkpoint(const std::filesystem::path& stem);
// Copies tensors by name; throws FormatError(ShapeMismatch) when names or
// shapes differ from the model's.
void load_parameters(nn::ParameterSet<float>& into, const nn::ParameterSet<float>& from);

struct ScenePrediction {
  std::vector<Pose> poses;
  std::vector<bool> size_clamped;
  std::vector<bool> rotation_fallback;
};

void write_predictions(const std::filesystem::path& path, const std::map<std::string, ScenePrediction>& predictions);
std::map<std::string, ScenePrediction> read_predictions(const std::filesystem::path& path);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const nlohmann::json& doc);

}  // namespace scenemaker

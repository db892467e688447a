#pragma once

// Point encoders that turn clouds into condition tokens for the pose model:
// one pooled geometry token per canonical object, a short local sequence per
// object from its normalized visible points, and a scene-level sequence from
// all visible points. They are trained jointly with the pose model.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scenemaker/geometry.hpp"
#include "scenemaker/nn.hpp"

namespace scenemaker {

// Farthest point sampling. The first pick is the lexicographically smallest
// point and ties go to the lexicographically smaller point, so the selected
// set does not depend on input order. `k` is clamped to the cloud size.
std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, int k);

struct PointGroups {
  PointCloud centers;
  // Per point: index of the nearest center (ties to the lower index).
  std::vector<int> assignment;
};

PointGroups group_points(const PointCloud& cloud, int k);

// Which key a condition token is and which object it belongs to.
struct ConditionKeys {
  enum class Kind : std::uint8_t { Global, Local };
  std::vector<Kind> kind;
  std::vector<int> owner;

  int size() const { return static_cast<int>(kind.size()); }
};

// Everything the pose model conditions on for one scene, already subsampled.
struct ConditionInput {
  std::vector<PointCloud> geometry;               // canonical, per object
  std::vector<std::optional<PointCloud>> local;   // normalized visible points; nothing = empty condition
  PointCloud global;                              // visible scene points, normalized scene frame
  std::vector<std::uint32_t> global_owner;        // object of every global point

  int objects() const { return static_cast<int>(geometry.size()); }
};

template <typename T>
struct PointEncoderCache {
  typename nn::Mlp<T>::Cache mlp;
  nn::Matrix<T> centers;
  std::vector<Eigen::Index> argmax;  // groups x width, row-major
  int groups = 0;
};

// Shared per-point MLP followed by a max-pool per group, plus a linear
// embedding of the group center when there is more than one group.
template <typename T>
struct PointEncoder {
  nn::Mlp<T> mlp;
  nn::Linear<T> center;

  static PointEncoder create(nn::ParameterSet<T>& ps, const std::string& name, int hidden, int width);

  nn::Matrix<T> forward(const nn::ParameterSet<T>& ps, const PointCloud& cloud, const PointGroups& groups,
                        PointEncoderCache<T>* cache) const;
  void backward(const nn::ParameterSet<T>& ps, nn::ParameterSet<T>& grads, const PointEncoderCache<T>& cache,
                const nn::Matrix<T>& dtokens) const;
};

struct EncoderSettings {
  int width = 128;
  int hidden = 64;
  int k_local = 16;
  int k_global = 64;
};

template <typename T>
struct EncodedConditions {
  nn::Matrix<T> geometry;  // objects x width, one token per object
  nn::Matrix<T> keys;      // all condition tokens, layer-normalized
  ConditionKeys layout;
  // Majority object of each global key; local keys carry their own object.
  std::vector<int> key_position;
};

template <typename T>
struct ConditionCache {
  std::vector<PointEncoderCache<T>> geometry;
  std::vector<std::optional<PointEncoderCache<T>>> local;
  PointEncoderCache<T> global;
  nn::LayerNormCache<T> keys_norm;
  std::vector<int> local_offset;  // first key row of each object's local tokens
};

template <typename T>
class ConditionEncoders {
 public:
  ConditionEncoders() = default;
  ConditionEncoders(nn::ParameterSet<T>& ps, const EncoderSettings& settings);

  const EncoderSettings& settings() const { return settings_; }

  // One token per group, in farthest-point-sampling order.
  nn::Matrix<T> encode_points(const nn::ParameterSet<T>& ps, const PointCloud& cloud, int k) const;
  // Pooled canonical-geometry token (1 x width); an empty cloud maps to the
  // learned empty-condition vector.
  nn::Matrix<T> encode_geometry(const nn::ParameterSet<T>& ps, const PointCloud& cloud) const;
  // Local tokens depend only on the normalized object cloud.
  nn::Matrix<T> encode_local(const nn::ParameterSet<T>& ps, const std::optional<PointCloud>& normalized) const;
  nn::Matrix<T> encode_global(const nn::ParameterSet<T>& ps, const PointCloud& scene) const;

  EncodedConditions<T> encode(const nn::ParameterSet<T>& ps, const ConditionInput& input, ConditionCache<T>* cache) const;
  void backward(const nn::ParameterSet<T>& ps, nn::ParameterSet<T>& grads, const ConditionInput& input,
                const ConditionCache<T>& cache, const nn::Matrix<T>& dgeometry, const nn::Matrix<T>& dkeys) const;

 private:
  EncoderSettings settings_;
  PointEncoder<T> geometry_, local_, global_;
  std::size_t empty_ = 0;
};

}  // namespace scenemaker

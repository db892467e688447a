#pragma once

// Flow-matching diffusion transformer over per-object pose tokens.
//
// Every object contributes four consecutive tokens (rotation, translation,
// size, geometry). Each block runs five residual stages, each gated by
// timestep-conditioned adaptive layer norm:
//
//   GSA  self-attention across all tokens of the scene
//   LSA  self-attention inside each object's quadruple
//   GCA  translation and size tokens attend scene-level condition keys
//   LCA  rotation tokens attend their own object's local condition keys
//   FFN  per-token feed-forward
//
// Rotary position embedding uses the object index, shared by all four tokens
// of an object and by the condition keys owned by that object.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scenemaker/conditions.hpp"
#include "scenemaker/geometry.hpp"
#include "scenemaker/nn.hpp"

namespace scenemaker {

enum class TokenRole : int { Rotation = 0, Translation = 1, Size = 2, Geometry = 3 };

inline constexpr int kTokensPerObject = 4;
// 6D rotation + translation + size.
inline constexpr int kPoseDims = 12;

struct TokenLayout {
  int objects = 0;

  int length() const { return kTokensPerObject * objects; }
  static TokenRole role(int position) { return static_cast<TokenRole>(position % kTokensPerObject); }
  static int object(int position) { return position / kTokensPerObject; }
  static int position(int object, TokenRole role) { return object * kTokensPerObject + static_cast<int>(role); }
};

struct AblationFlags {
  bool disable_gsa = false;
  bool disable_lsa = false;
  // Drops the local cross stage; rotation tokens then join the global one.
  bool disable_lca = false;
};

// Throws ConfigError when no self-attention stage would remain.
void validate(const AblationFlags& flags);

enum class Stage : int { Gsa = 0, Lsa = 1, Gca = 2, Lca = 3, Ffn = 4 };
inline constexpr int kStageCount = 5;
const char* stage_name(Stage s);

struct AttentionMasks {
  nn::BoolMatrix gsa;  // 4n x 4n
  nn::BoolMatrix lsa;  // 4n x 4n, block diagonal
  nn::BoolMatrix gca;  // 4n x keys
  nn::BoolMatrix lca;  // 4n x keys
};

// Masks for n objects against `keys`. A disabled stage gets an all-false
// mask (it is skipped in the forward pass). With no keys given, one global
// key plus one local key per object is assumed.
AttentionMasks build_masks(int n, const ConditionKeys& keys = {}, const AblationFlags& flags = {});
ConditionKeys default_keys(int n);

struct DiTConfig {
  int width = 128;
  int heads = 4;
  int blocks = 4;
  int point_hidden = 64;
  int ffn_multiplier = 4;
  int k_local = 16;
  int k_global = 64;
  int sampling_steps = 50;
  double rope_base = 10000.0;
  AblationFlags ablation;
  std::uint64_t seed = 0;
};

// Throws ConfigError on inconsistent settings.
void validate(const DiTConfig& config);

// Flow-matching sample: x_t = (1 - t) x0 + t x1 with target v = x1 - x0.
template <typename T>
struct FlowBatch {
  nn::Matrix<T> x0, x1, xt, velocity;
  T t = 0;

  static FlowBatch make(const nn::Matrix<T>& x0, const nn::Matrix<T>& x1, T t);
};

struct LossBreakdown {
  double total = 0;
  double rotation = 0;
  double translation = 0;
  double size = 0;
};

// Attention probabilities recorded during a forward pass: per block, per
// stage, per head, queries x keys (all keys for cross stages). Empty when the
// stage is disabled.
template <typename T>
struct ForwardTrace {
  std::vector<std::array<std::vector<nn::Matrix<T>>, kStageCount>> attention;
};

// x1 rows for normalized-frame poses: [a1 a2 | t | s].
template <typename T>
nn::Matrix<T> encode_pose_targets(std::span<const Pose> poses);

struct DecodedPoses {
  std::vector<Pose> poses;
  std::vector<bool> size_clamped;
  std::vector<bool> rotation_fallback;
};

// Inverse of encode_pose_targets with the sampling safeguards: sizes are
// clamped to at least 1e-3 and degenerate 6D columns are repaired.
template <typename T>
DecodedPoses decode_pose_rows(const nn::Matrix<T>& x);

// Euler integration of dx/dt = field(x, t) from t = 0 to 1 in `steps`
// uniform steps.
template <typename T>
nn::Matrix<T> euler_integrate(nn::Matrix<T> x, int steps,
                              const std::function<nn::Matrix<T>(const nn::Matrix<T>&, T)>& field);

template <typename T>
class PoseDiT {
 public:
  explicit PoseDiT(const DiTConfig& config);

  const DiTConfig& config() const { return config_; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }
  const ConditionEncoders<T>& encoders() const { return encoders_; }

  // Switches ablation stages without touching weights.
  void set_ablation(const AblationFlags& flags);

  EncodedConditions<T> encode(const ConditionInput& input) const;

  // Pose tokens (4n x width) for the noisy state x_t (n x 12) and geometry
  // tokens from `geometry` (n x width).
  nn::Matrix<T> encode_pose_tokens(const nn::Matrix<T>& xt, const nn::Matrix<T>& geometry) const;
  // Velocity rows (n x 12) from final token states (4n x width); geometry
  // rows are ignored.
  nn::Matrix<T> decode_pose_tokens(const nn::Matrix<T>& tokens) const;

  // Predicted velocity (n x 12). Throws NumericalError on non-finite
  // activations.
  nn::Matrix<T> velocity(const EncodedConditions<T>& cond, const nn::Matrix<T>& xt, T t,
                         ForwardTrace<T>* trace = nullptr) const;

  // Equal-weight squared error on the rotation, translation and size
  // velocity components. Adds parameter gradients to `grads` when given.
  LossBreakdown loss(const ConditionInput& input, const FlowBatch<T>& batch, nn::ParameterSet<T>* grads) const;

  // Euler integration from x0 ~ N(0, I) over `steps` uniform steps (config
  // default when 0). Returns the final state rows (n x 12).
  nn::Matrix<T> sample_rows(const ConditionInput& input, std::uint64_t seed, int steps = 0) const;

 private:
  struct Block {
    nn::Linear<T> modulation;  // SiLU(c) -> shift/scale/gate for five stages
    nn::Attention<T> gsa, lsa, gca, lca;
    nn::Linear<T> ffn_in, ffn_out;
  };
  struct Pass;

  void build();
  void initialize(std::uint64_t seed);
  nn::Matrix<T> time_features(T t) const;
  nn::Matrix<T> run(const EncodedConditions<T>& cond, const nn::Matrix<T>& xt, T t, Pass* pass,
                    ForwardTrace<T>* trace) const;
  void backward(const Pass& pass, const nn::Matrix<T>& dout, nn::ParameterSet<T>& grads, nn::Matrix<T>& dgeometry,
                nn::Matrix<T>& dkeys) const;

  DiTConfig config_;
  nn::ParameterSet<T> params_;
  ConditionEncoders<T> encoders_;
  nn::Mlp<T> rot_in_, trans_in_, size_in_;
  nn::Linear<T> geometry_in_;
  nn::Mlp<T> time_mlp_;
  std::vector<Block> blocks_;
  nn::Linear<T> final_modulation_;
  nn::Mlp<T> rot_out_, trans_out_, size_out_;
  nn::Rope rope_;
};

}  // namespace scenemaker

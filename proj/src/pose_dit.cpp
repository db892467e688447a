#include "scenemaker/pose_dit.hpp"

#include <cmath>
#include <string>

#include "scenemaker/errors.hpp"
#include "scenemaker/rng.hpp"

namespace scenemaker {

namespace {

constexpr int kRotDims = 6;
constexpr int kVecDims = 3;
constexpr int kTransCol = 6;
constexpr int kSizeCol = 9;

template <typename T>
using Row = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// h = x * (1 + scale) + shift, broadcast over rows.
template <typename T>
nn::Matrix<T> modulate(const nn::Matrix<T>& x, const Row<T>& shift, const Row<T>& scale) {
  nn::Matrix<T> h = x;
  const Row<T> gain = scale.array() + T(1);
  for (nn::Index r = 0; r < h.rows(); ++r) h.row(r) = h.row(r).cwiseProduct(gain) + shift;
  return h;
}

template <typename T>
void check_finite(const nn::Matrix<T>& m, const std::string& where) {
  if (!m.allFinite()) throw NumericalError("non-finite activation in " + where);
}

template <typename T>
nn::Matrix<T> gather_rows(const nn::Matrix<T>& m, int first, int stride, int count) {
  nn::Matrix<T> out(count, m.cols());
  for (int i = 0; i < count; ++i) out.row(i) = m.row(first + i * stride);
  return out;
}

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Gsa: return "gsa";
    case Stage::Lsa: return "lsa";
    case Stage::Gca: return "gca";
    case Stage::Lca: return "lca";
    case Stage::Ffn: return "ffn";
  }
  return "?";
}

void validate(const AblationFlags& flags) {
  if (flags.disable_gsa && flags.disable_lsa) {
    throw ConfigError("ablation: disable_gsa and disable_lsa together remove all self-attention");
  }
}

void validate(const DiTConfig& c) {
  if (c.width < 2 || c.heads < 1) throw ConfigError("model: width and heads must be positive");
  if (c.width % c.heads != 0) throw ConfigError("model: width " + std::to_string(c.width) + " not divisible by heads " + std::to_string(c.heads));
  if ((c.width / c.heads) % 2 != 0) throw ConfigError("model: head width must be even for rotary embedding");
  if (c.blocks < 1) throw ConfigError("model: blocks must be at least 1");
  if (c.point_hidden < 1 || c.ffn_multiplier < 1) throw ConfigError("model: hidden sizes must be positive");
  if (c.k_local < 1 || c.k_global < 1) throw ConfigError("model: condition token counts must be positive");
  if (c.sampling_steps < 1) throw ConfigError("model: sampling_steps must be at least 1");
  if (!(c.rope_base > 1.0)) throw ConfigError("model: rope_base must exceed 1");
  validate(c.ablation);
}

ConditionKeys default_keys(int n) {
  ConditionKeys keys;
  keys.kind.push_back(ConditionKeys::Kind::Global);
  keys.owner.push_back(0);
  for (int i = 0; i < n; ++i) {
    keys.kind.push_back(ConditionKeys::Kind::Local);
    keys.owner.push_back(i);
  }
  return keys;
}

AttentionMasks build_masks(int n, const ConditionKeys& given, const AblationFlags& flags) {
  if (n < 1) throw ConfigError("build_masks: object count must be at least 1");
  validate(flags);
  const ConditionKeys keys = given.size() == 0 ? default_keys(n) : given;
  const int len = kTokensPerObject * n;
  AttentionMasks m;
  m.gsa = nn::BoolMatrix(len, len, !flags.disable_gsa);
  m.lsa = nn::BoolMatrix(len, len, false);
  if (!flags.disable_lsa) {
    for (int r = 0; r < len; ++r) {
      for (int c = 0; c < len; ++c) m.lsa.set(r, c, TokenLayout::object(r) == TokenLayout::object(c));
    }
  }
  m.gca = nn::BoolMatrix(len, keys.size(), false);
  m.lca = nn::BoolMatrix(len, keys.size(), false);
  for (int r = 0; r < len; ++r) {
    const TokenRole role = TokenLayout::role(r);
    const int obj = TokenLayout::object(r);
    for (int c = 0; c < keys.size(); ++c) {
      const bool global = keys.kind[static_cast<std::size_t>(c)] == ConditionKeys::Kind::Global;
      if (role == TokenRole::Translation || role == TokenRole::Size) {
        m.gca.set(r, c, global);
      } else if (role == TokenRole::Rotation) {
        if (flags.disable_lca) {
          m.gca.set(r, c, global);
        } else {
          m.lca.set(r, c, !global && keys.owner[static_cast<std::size_t>(c)] == obj);
        }
      }
    }
  }
  return m;
}

template <typename T>
FlowBatch<T> FlowBatch<T>::make(const nn::Matrix<T>& x0, const nn::Matrix<T>& x1, T t) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols()) throw ConfigError("flow batch: x0 and x1 shapes differ");
  FlowBatch b;
  b.x0 = x0;
  b.x1 = x1;
  b.t = t;
  // Endpoints are reproduced bit-exactly: (1 - 0) * x0 + 0 * x1 == x0.
  b.xt = (T(1) - t) * x0.array() + t * x1.array();
  b.velocity = x1 - x0;
  return b;
}

template <typename T>
nn::Matrix<T> encode_pose_targets(std::span<const Pose> poses) {
  nn::Matrix<T> x(static_cast<nn::Index>(poses.size()), kPoseDims);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Pose& p = poses[i];
    const auto r = static_cast<nn::Index>(i);
    for (int k = 0; k < 3; ++k) {
      x(r, k) = T(p.rotation(k, 0));
      x(r, 3 + k) = T(p.rotation(k, 1));
      x(r, kTransCol + k) = T(p.translation[k]);
      x(r, kSizeCol + k) = T(p.size[k]);
    }
  }
  return x;
}

template <typename T>
DecodedPoses decode_pose_rows(const nn::Matrix<T>& x) {
  if (x.cols() != kPoseDims) throw ConfigError("pose rows must have 12 columns");
  DecodedPoses out;
  for (nn::Index r = 0; r < x.rows(); ++r) {
    Vec3 a1, a2, t, s;
    for (int k = 0; k < 3; ++k) {
      a1[k] = double(x(r, k));
      a2[k] = double(x(r, 3 + k));
      t[k] = double(x(r, kTransCol + k));
      s[k] = double(x(r, kSizeCol + k));
    }
    Pose p;
    bool fallback = false;
    try {
      p.rotation = rot6d_to_matrix({a1, a2});
    } catch (const DegenerateRotationError&) {
      // Perturb the offending columns toward the coordinate axes and retry.
      fallback = true;
      if (!(a1.norm() > 1e-6)) a1 = Vec3::UnitX();
      Eigen::Index axis;
      a1.cwiseAbs().minCoeff(&axis);
      a2 += 1e-3 * Vec3::Unit(axis) * std::max(1.0, a2.norm());
      try {
        p.rotation = rot6d_to_matrix({a1, a2});
      } catch (const DegenerateRotationError&) {
        p.rotation = rot6d_to_matrix({a1, Vec3::Unit(axis)});
      }
    }
    bool clamped = false;
    for (int k = 0; k < 3; ++k) {
      if (!(s[k] >= 1e-3)) {
        s[k] = 1e-3;
        clamped = true;
      }
    }
    p.translation = t;
    p.size = s;
    out.poses.push_back(p);
    out.size_clamped.push_back(clamped);
    out.rotation_fallback.push_back(fallback);
  }
  return out;
}

template <typename T>
nn::Matrix<T> euler_integrate(nn::Matrix<T> x, int steps,
                              const std::function<nn::Matrix<T>(const nn::Matrix<T>&, T)>& field) {
  if (steps < 1) throw ConfigError("sampling steps must be at least 1");
  const T dt = T(1) / T(steps);
  for (int s = 0; s < steps; ++s) x += dt * field(x, T(s) * dt);
  return x;
}

template <typename T>
struct PoseDiT<T>::Pass {
  struct Cross {
    std::vector<int> cols;
    nn::BoolMatrix mask;
    nn::Matrix<T> keys;
    std::vector<int> positions;
  };
  struct StageCache {
    bool active = false;
    nn::LayerNormCache<T> ln;
    nn::Matrix<T> h, f;
    nn::AttentionCache<T> attn;
    nn::Matrix<T> ffn_pre, ffn_act;
  };
  struct BlockCache {
    nn::Matrix<T> mod;
    std::array<StageCache, kStageCount> stages;
  };

  int n = 0;
  AttentionMasks masks;
  std::vector<int> positions;
  Cross gca, lca;
  typename nn::Mlp<T>::Cache rot_in, trans_in, size_in, time;
  nn::Matrix<T> geometry, c, sc;
  std::vector<BlockCache> blocks;
  nn::LayerNormCache<T> final_ln;
  nn::Matrix<T> final_mod, final_h;
  typename nn::Mlp<T>::Cache rot_out, trans_out, size_out;
};

template <typename T>
PoseDiT<T>::PoseDiT(const DiTConfig& config) : config_(config) {
  validate(config_);
  build();
  initialize(derive_seed(config_.seed, "model/init"));
}

template <typename T>
void PoseDiT<T>::set_ablation(const AblationFlags& flags) {
  validate(flags);
  config_.ablation = flags;
}

template <typename T>
void PoseDiT<T>::build() {
  const int d = config_.width;
  encoders_ = ConditionEncoders<T>(params_, {d, config_.point_hidden, config_.k_local, config_.k_global});
  rot_in_ = nn::Mlp<T>::create(params_, "pose.rot_in", kRotDims, d, d);
  trans_in_ = nn::Mlp<T>::create(params_, "pose.trans_in", kVecDims, d, d);
  size_in_ = nn::Mlp<T>::create(params_, "pose.size_in", kVecDims, d, d);
  geometry_in_ = nn::Linear<T>::create(params_, "pose.geometry_in", d, d);
  time_mlp_ = nn::Mlp<T>::create(params_, "pose.time", d, d, d);
  for (int b = 0; b < config_.blocks; ++b) {
    const std::string p = "block" + std::to_string(b);
    Block blk;
    blk.modulation = nn::Linear<T>::create(params_, p + ".modulation", d, 3 * kStageCount * d);
    blk.gsa = nn::Attention<T>::create(params_, p + ".gsa", d, config_.heads);
    blk.lsa = nn::Attention<T>::create(params_, p + ".lsa", d, config_.heads);
    blk.gca = nn::Attention<T>::create(params_, p + ".gca", d, config_.heads);
    blk.lca = nn::Attention<T>::create(params_, p + ".lca", d, config_.heads);
    blk.ffn_in = nn::Linear<T>::create(params_, p + ".ffn_in", d, config_.ffn_multiplier * d);
    blk.ffn_out = nn::Linear<T>::create(params_, p + ".ffn_out", config_.ffn_multiplier * d, d);
    blocks_.push_back(blk);
  }
  final_modulation_ = nn::Linear<T>::create(params_, "final.modulation", d, 2 * d);
  rot_out_ = nn::Mlp<T>::create(params_, "pose.rot_out", d, d, kRotDims);
  trans_out_ = nn::Mlp<T>::create(params_, "pose.trans_out", d, d, kVecDims);
  size_out_ = nn::Mlp<T>::create(params_, "pose.size_out", d, d, kVecDims);
  rope_ = nn::Rope{d / config_.heads, config_.rope_base};
}

template <typename T>
void PoseDiT<T>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const std::string& name = params_.name(i);
    nn::Matrix<T>& m = params_[i];
    // Modulation starts at zero so every block begins as the identity.
    if (name.find("modulation") != std::string::npos || name.ends_with(".bias")) {
      m.setZero();
    } else if (name == "cond.empty") {
      nn::init_normal(m, 1.0, rng);
    } else {
      nn::init_normal(m, 1.0 / std::sqrt(double(m.rows())), rng);
    }
  }
}

template <typename T>
EncodedConditions<T> PoseDiT<T>::encode(const ConditionInput& input) const {
  return encoders_.encode(params_, input, nullptr);
}

template <typename T>
nn::Matrix<T> PoseDiT<T>::time_features(T t) const {
  const int half = config_.width / 2;
  nn::Matrix<T> e(1, config_.width);
  const double scaled = double(t) * 1000.0;
  for (int j = 0; j < half; ++j) {
    const double freq = std::exp(-std::log(10000.0) * j / half);
    e(0, j) = T(std::cos(scaled * freq));
    e(0, half + j) = T(std::sin(scaled * freq));
  }
  return e;
}

template <typename T>
nn::Matrix<T> PoseDiT<T>::encode_pose_tokens(const nn::Matrix<T>& xt, const nn::Matrix<T>& geometry) const {
  if (xt.cols() != kPoseDims) throw ConfigError("pose state must have 12 columns");
  if (geometry.rows() != xt.rows() || geometry.cols() != config_.width) {
    throw ConfigError("geometry tokens must be objects x width (" + std::to_string(config_.width) + ")");
  }
  const int n = static_cast<int>(xt.rows());
  const nn::Matrix<T> rot = rot_in_.forward(params_, xt.leftCols(kRotDims), nullptr);
  const nn::Matrix<T> trans = trans_in_.forward(params_, xt.middleCols(kTransCol, kVecDims), nullptr);
  const nn::Matrix<T> size = size_in_.forward(params_, xt.middleCols(kSizeCol, kVecDims), nullptr);
  const nn::Matrix<T> geo = geometry_in_.forward(params_, geometry);
  nn::Matrix<T> x(kTokensPerObject * n, config_.width);
  for (int i = 0; i < n; ++i) {
    x.row(4 * i) = rot.row(i);
    x.row(4 * i + 1) = trans.row(i);
    x.row(4 * i + 2) = size.row(i);
    x.row(4 * i + 3) = geo.row(i);
  }
  return x;
}

template <typename T>
nn::Matrix<T> PoseDiT<T>::decode_pose_tokens(const nn::Matrix<T>& tokens) const {
  if (tokens.cols() != config_.width || tokens.rows() % kTokensPerObject != 0) {
    throw ConfigError("token matrix must be 4n x width (" + std::to_string(config_.width) + ")");
  }
  const int n = static_cast<int>(tokens.rows() / kTokensPerObject);
  nn::Matrix<T> v(n, kPoseDims);
  v.leftCols(kRotDims) = rot_out_.forward(params_, gather_rows(tokens, 0, 4, n), nullptr);
  v.middleCols(kTransCol, kVecDims) = trans_out_.forward(params_, gather_rows(tokens, 1, 4, n), nullptr);
  v.middleCols(kSizeCol, kVecDims) = size_out_.forward(params_, gather_rows(tokens, 2, 4, n), nullptr);
  return v;
}

template <typename T>
nn::Matrix<T> PoseDiT<T>::run(const EncodedConditions<T>& cond, const nn::Matrix<T>& xt, T t, Pass* pass,
                              ForwardTrace<T>* trace) const {
  const int d = config_.width;
  const int n = static_cast<int>(xt.rows());
  if (n < 1) throw ConfigError("pose model needs at least one object");
  if (xt.cols() != kPoseDims) throw ConfigError("pose state must have 12 columns");
  if (cond.geometry.rows() != n || cond.geometry.cols() != d) throw ConfigError("geometry tokens do not match object count or width");
  if (cond.keys.rows() != cond.layout.size() || (cond.keys.rows() > 0 && cond.keys.cols() != d)) {
    throw ConfigError("condition keys do not match their layout or the model width");
  }
  Pass& P = *pass;
  P.n = n;
  P.masks = build_masks(n, cond.layout.size() > 0 ? cond.layout : ConditionKeys{}, config_.ablation);
  if (cond.layout.size() == 0) {
    // No condition tokens at all: cross stages have nothing to read.
    P.masks.gca = nn::BoolMatrix(4 * n, 0);
    P.masks.lca = nn::BoolMatrix(4 * n, 0);
  }
  P.positions.resize(static_cast<std::size_t>(4 * n));
  for (int r = 0; r < 4 * n; ++r) P.positions[static_cast<std::size_t>(r)] = TokenLayout::object(r);

  auto prepare_cross = [&](const nn::BoolMatrix& full, typename Pass::Cross& cross) {
    cross.cols.clear();
    for (int c = 0; c < full.cols; ++c) {
      if (full.col_any(c)) cross.cols.push_back(c);
    }
    const int k = static_cast<int>(cross.cols.size());
    cross.mask = nn::BoolMatrix(full.rows, k);
    cross.keys.resize(k, d);
    cross.positions.resize(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
      const int c = cross.cols[static_cast<std::size_t>(j)];
      for (int r = 0; r < full.rows; ++r) cross.mask.set(r, j, full(r, c));
      cross.keys.row(j) = cond.keys.row(c);
      cross.positions[static_cast<std::size_t>(j)] = cond.key_position[static_cast<std::size_t>(c)];
    }
  };
  prepare_cross(P.masks.gca, P.gca);
  prepare_cross(P.masks.lca, P.lca);

  // Token encoders.
  const nn::Matrix<T> rot = rot_in_.forward(params_, xt.leftCols(kRotDims), &P.rot_in);
  const nn::Matrix<T> trans = trans_in_.forward(params_, xt.middleCols(kTransCol, kVecDims), &P.trans_in);
  const nn::Matrix<T> size = size_in_.forward(params_, xt.middleCols(kSizeCol, kVecDims), &P.size_in);
  P.geometry = cond.geometry;
  const nn::Matrix<T> geo = geometry_in_.forward(params_, P.geometry);
  nn::Matrix<T> x(4 * n, d);
  for (int i = 0; i < n; ++i) {
    x.row(4 * i) = rot.row(i);
    x.row(4 * i + 1) = trans.row(i);
    x.row(4 * i + 2) = size.row(i);
    x.row(4 * i + 3) = geo.row(i);
  }

  P.c = time_mlp_.forward(params_, time_features(t), &P.time);
  P.sc = nn::silu(P.c);

  if (trace) trace->attention.assign(blocks_.size(), {});
  P.blocks.resize(blocks_.size());
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Block& blk = blocks_[b];
    auto& bc = P.blocks[b];
    bc.mod = blk.modulation.forward(params_, P.sc);
    for (int s = 0; s < kStageCount; ++s) {
      auto& sc = bc.stages[static_cast<std::size_t>(s)];
      const Stage stage = static_cast<Stage>(s);
      const nn::BoolMatrix* mask = nullptr;
      const typename Pass::Cross* cross = nullptr;
      const nn::Attention<T>* attn = nullptr;
      switch (stage) {
        case Stage::Gsa: mask = &P.masks.gsa; attn = &blk.gsa; break;
        case Stage::Lsa: mask = &P.masks.lsa; attn = &blk.lsa; break;
        case Stage::Gca: cross = &P.gca; mask = &cross->mask; attn = &blk.gca; break;
        case Stage::Lca: cross = &P.lca; mask = &cross->mask; attn = &blk.lca; break;
        case Stage::Ffn: break;
      }
      const bool disabled = (stage == Stage::Gsa && config_.ablation.disable_gsa) ||
                            (stage == Stage::Lsa && config_.ablation.disable_lsa) ||
                            (stage == Stage::Lca && config_.ablation.disable_lca);
      sc.active = !disabled && (stage == Stage::Ffn || mask->cols > 0);
      if (!sc.active) {
        if (trace && !disabled && cross) {
          // Nothing to attend: record all-zero weights over the full key set.
          trace->attention[b][static_cast<std::size_t>(s)].assign(
              static_cast<std::size_t>(config_.heads), nn::Matrix<T>::Zero(4 * n, cond.keys.rows()));
        }
        continue;
      }
      const Row<T> shift = bc.mod.block(0, (3 * s) * d, 1, d);
      const Row<T> scale = bc.mod.block(0, (3 * s + 1) * d, 1, d);
      const Row<T> gate = bc.mod.block(0, (3 * s + 2) * d, 1, d);
      sc.h = modulate(nn::layer_norm<T>(x, &sc.ln), shift, scale);
      if (stage == Stage::Ffn) {
        sc.ffn_pre = blk.ffn_in.forward(params_, sc.h);
        sc.ffn_act = sc.ffn_pre.unaryExpr([](T v) { return nn::gelu(v); });
        sc.f = blk.ffn_out.forward(params_, sc.ffn_act);
      } else if (cross) {
        sc.f = attn->forward(params_, sc.h, cross->keys, *mask, P.positions, cross->positions, &rope_, sc.attn);
      } else {
        sc.f = attn->forward(params_, sc.h, sc.h, *mask, P.positions, P.positions, &rope_, sc.attn);
      }
      for (nn::Index r = 0; r < x.rows(); ++r) x.row(r) += sc.f.row(r).cwiseProduct(gate);
      check_finite(x, "block " + std::to_string(b) + " stage " + stage_name(stage));

      if (trace && stage != Stage::Ffn) {
        auto& out = trace->attention[b][static_cast<std::size_t>(s)];
        out.clear();
        for (const nn::Matrix<T>& p : sc.attn.probs) {
          if (!cross) {
            out.push_back(p);
            continue;
          }
          nn::Matrix<T> full = nn::Matrix<T>::Zero(p.rows(), cond.keys.rows());
          for (std::size_t j = 0; j < cross->cols.size(); ++j) full.col(cross->cols[j]) = p.col(static_cast<nn::Index>(j));
          out.push_back(std::move(full));
        }
      }
    }
  }

  P.final_mod = final_modulation_.forward(params_, P.sc);
  const Row<T> shift = P.final_mod.block(0, 0, 1, d);
  const Row<T> scale = P.final_mod.block(0, d, 1, d);
  P.final_h = modulate(nn::layer_norm<T>(x, &P.final_ln), shift, scale);

  nn::Matrix<T> v(n, kPoseDims);
  v.leftCols(kRotDims) = rot_out_.forward(params_, gather_rows(P.final_h, 0, 4, n), &P.rot_out);
  v.middleCols(kTransCol, kVecDims) = trans_out_.forward(params_, gather_rows(P.final_h, 1, 4, n), &P.trans_out);
  v.middleCols(kSizeCol, kVecDims) = size_out_.forward(params_, gather_rows(P.final_h, 2, 4, n), &P.size_out);
  check_finite(v, "velocity output");
  return v;
}

template <typename T>
nn::Matrix<T> PoseDiT<T>::velocity(const EncodedConditions<T>& cond, const nn::Matrix<T>& xt, T t,
                                   ForwardTrace<T>* trace) const {
  Pass pass;
  return run(cond, xt, t, &pass, trace);
}

template <typename T>
void PoseDiT<T>::backward(const Pass& P, const nn::Matrix<T>& dv, nn::ParameterSet<T>& grads, nn::Matrix<T>& dgeometry,
                          nn::Matrix<T>& dkeys) const {
  const int d = config_.width;
  const int n = P.n;
  const auto& ps = params_;

  // Decoders.
  nn::Matrix<T> dh = nn::Matrix<T>::Zero(4 * n, d);
  const nn::Matrix<T> drot = rot_out_.backward(ps, grads, P.rot_out, dv.leftCols(kRotDims));
  const nn::Matrix<T> dtrans = trans_out_.backward(ps, grads, P.trans_out, dv.middleCols(kTransCol, kVecDims));
  const nn::Matrix<T> dsize = size_out_.backward(ps, grads, P.size_out, dv.middleCols(kSizeCol, kVecDims));
  for (int i = 0; i < n; ++i) {
    dh.row(4 * i) = drot.row(i);
    dh.row(4 * i + 1) = dtrans.row(i);
    dh.row(4 * i + 2) = dsize.row(i);
  }

  nn::Matrix<T> dsc = nn::Matrix<T>::Zero(1, d);
  // Backward through h = LN(x) * (1 + scale) + shift; returns dx and fills
  // the shift/scale gradients.
  auto modulate_backward = [&](const nn::LayerNormCache<T>& ln, const Row<T>& scale, const nn::Matrix<T>& dhh,
                               Eigen::Ref<Row<T>> dshift, Eigen::Ref<Row<T>> dscale) {
    dshift = dhh.colwise().sum();
    dscale = dhh.cwiseProduct(ln.y).colwise().sum();
    nn::Matrix<T> dln = dhh;
    const Row<T> gain = scale.array() + T(1);
    for (nn::Index r = 0; r < dln.rows(); ++r) dln.row(r) = dln.row(r).cwiseProduct(gain);
    return nn::layer_norm_backward(ln, dln);
  };

  nn::Matrix<T> dfinal_mod(1, 2 * d);
  nn::Matrix<T> dx = modulate_backward(P.final_ln, P.final_mod.block(0, d, 1, d), dh, dfinal_mod.block(0, 0, 1, d),
                                       dfinal_mod.block(0, d, 1, d));
  dsc += final_modulation_.backward(ps, grads, P.sc, dfinal_mod);

  dkeys = nn::Matrix<T>::Zero(static_cast<nn::Index>(P.masks.gca.cols), d);
  for (std::size_t bi = blocks_.size(); bi-- > 0;) {
    const Block& blk = blocks_[bi];
    const auto& bc = P.blocks[bi];
    nn::Matrix<T> dmod = nn::Matrix<T>::Zero(1, 3 * kStageCount * d);
    for (int s = kStageCount - 1; s >= 0; --s) {
      const auto& sc = bc.stages[static_cast<std::size_t>(s)];
      if (!sc.active) continue;
      const Stage stage = static_cast<Stage>(s);
      const Row<T> gate = bc.mod.block(0, (3 * s + 2) * d, 1, d);
      dmod.block(0, (3 * s + 2) * d, 1, d) = dx.cwiseProduct(sc.f).colwise().sum();
      nn::Matrix<T> df = dx;
      for (nn::Index r = 0; r < df.rows(); ++r) df.row(r) = df.row(r).cwiseProduct(gate);

      nn::Matrix<T> dhh;
      if (stage == Stage::Ffn) {
        const nn::Matrix<T> dact = blk.ffn_out.backward(ps, grads, sc.ffn_act, df);
        const nn::Matrix<T> dpre = dact.cwiseProduct(sc.ffn_pre.unaryExpr([](T v) { return nn::gelu_grad(v); }));
        dhh = blk.ffn_in.backward(ps, grads, sc.h, dpre);
      } else if (stage == Stage::Gca || stage == Stage::Lca) {
        const auto& cross = stage == Stage::Gca ? P.gca : P.lca;
        const auto& attn = stage == Stage::Gca ? blk.gca : blk.lca;
        nn::Matrix<T> dk;
        attn.backward(ps, grads, sc.attn, P.positions, cross.positions, &rope_, df, dhh, dk);
        for (std::size_t j = 0; j < cross.cols.size(); ++j) dkeys.row(cross.cols[j]) += dk.row(static_cast<nn::Index>(j));
      } else {
        const auto& attn = stage == Stage::Gsa ? blk.gsa : blk.lsa;
        nn::Matrix<T> dkv;
        attn.backward(ps, grads, sc.attn, P.positions, P.positions, &rope_, df, dhh, dkv);
        dhh += dkv;
      }
      dx += modulate_backward(sc.ln, bc.mod.block(0, (3 * s + 1) * d, 1, d), dhh, dmod.block(0, (3 * s) * d, 1, d),
                              dmod.block(0, (3 * s + 1) * d, 1, d));
    }
    dsc += blk.modulation.backward(ps, grads, P.sc, dmod);
  }

  time_mlp_.backward(ps, grads, P.time, nn::silu_backward(P.c, dsc));

  nn::Matrix<T> drot_tok(n, d), dtrans_tok(n, d), dsize_tok(n, d), dgeo_tok(n, d);
  for (int i = 0; i < n; ++i) {
    drot_tok.row(i) = dx.row(4 * i);
    dtrans_tok.row(i) = dx.row(4 * i + 1);
    dsize_tok.row(i) = dx.row(4 * i + 2);
    dgeo_tok.row(i) = dx.row(4 * i + 3);
  }
  rot_in_.backward(ps, grads, P.rot_in, drot_tok);
  trans_in_.backward(ps, grads, P.trans_in, dtrans_tok);
  size_in_.backward(ps, grads, P.size_in, dsize_tok);
  dgeometry = geometry_in_.backward(ps, grads, P.geometry, dgeo_tok);
}

template <typename T>
LossBreakdown PoseDiT<T>::loss(const ConditionInput& input, const FlowBatch<T>& batch, nn::ParameterSet<T>* grads) const {
  const int n = input.objects();
  if (batch.xt.rows() != n || batch.xt.cols() != kPoseDims) throw ConfigError("flow batch does not match the object count");
  ConditionCache<T> ccache;
  const EncodedConditions<T> cond = encoders_.encode(params_, input, grads ? &ccache : nullptr);
  Pass pass;
  const nn::Matrix<T> v = run(cond, batch.xt, batch.t, &pass, nullptr);
  const nn::Matrix<T> err = v - batch.velocity;

  LossBreakdown out;
  out.rotation = double(err.leftCols(kRotDims).squaredNorm()) / (kRotDims * n);
  out.translation = double(err.middleCols(kTransCol, kVecDims).squaredNorm()) / (kVecDims * n);
  out.size = double(err.middleCols(kSizeCol, kVecDims).squaredNorm()) / (kVecDims * n);
  out.total = out.rotation + out.translation + out.size;
  if (!std::isfinite(out.total)) throw NumericalError("non-finite training loss");
  if (!grads) return out;

  nn::Matrix<T> dv(n, kPoseDims);
  dv.leftCols(kRotDims) = err.leftCols(kRotDims) * T(2.0 / (kRotDims * n));
  dv.rightCols(6) = err.rightCols(6) * T(2.0 / (kVecDims * n));
  nn::Matrix<T> dgeometry, dkeys;
  backward(pass, dv, *grads, dgeometry, dkeys);
  if (cond.keys.rows() == 0) dkeys.resize(0, config_.width);
  encoders_.backward(params_, *grads, input, ccache, dgeometry, dkeys);
  return out;
}

template <typename T>
nn::Matrix<T> PoseDiT<T>::sample_rows(const ConditionInput& input, std::uint64_t seed, int steps) const {
  const int s = steps > 0 ? steps : config_.sampling_steps;
  const int n = input.objects();
  if (n < 1) throw ConfigError("sampling needs at least one object");
  const EncodedConditions<T> cond = encode(input);
  Rng rng(seed);
  nn::Matrix<T> x0(n, kPoseDims);
  for (nn::Index i = 0; i < x0.size(); ++i) x0.data()[i] = T(rng.normal());
  return euler_integrate<T>(std::move(x0), s, [&](const nn::Matrix<T>& x, T t) { return velocity(cond, x, t); });
}

template struct FlowBatch<float>;
template struct FlowBatch<double>;
template nn::Matrix<float> encode_pose_targets<float>(std::span<const Pose>);
template nn::Matrix<double> encode_pose_targets<double>(std::span<const Pose>);
template DecodedPoses decode_pose_rows<float>(const nn::Matrix<float>&);
template DecodedPoses decode_pose_rows<double>(const nn::Matrix<double>&);
template nn::Matrix<float> euler_integrate<float>(nn::Matrix<float>, int,
                                                  const std::function<nn::Matrix<float>(const nn::Matrix<float>&, float)>&);
template nn::Matrix<double> euler_integrate<double>(
    nn::Matrix<double>, int, const std::function<nn::Matrix<double>(const nn::Matrix<double>&, double)>&);
template class PoseDiT<float>;
template class PoseDiT<double>;

}  // namespace scenemaker

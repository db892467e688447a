#include "scenemaker/conditions.hpp"

#include <algorithm>
#include <limits>
#include <map>

#include "scenemaker/kernels.hpp"

namespace scenemaker {

namespace {

bool lex_less(const Vec3& a, const Vec3& b) {
  return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
}

template <typename T>
nn::Matrix<T> to_matrix(const PointCloud& cloud) {
  nn::Matrix<T> m(static_cast<nn::Index>(cloud.size()), 3);
  for (std::size_t i = 0; i < cloud.size(); ++i) m.row(static_cast<nn::Index>(i)) = cloud[i].cast<T>().transpose();
  return m;
}

// Per-point MLP evaluated row by row with a fixed accumulation order, so a
// point's features are bitwise independent of its position in the cloud.
template <typename T>
nn::Matrix<T> pointwise_features(const nn::ParameterSet<T>& ps, const nn::Mlp<T>& mlp, typename nn::Mlp<T>::Cache& c) {
  const nn::Matrix<T>& w1 = ps[mlp.first.w];
  const nn::Matrix<T>& b1 = ps[mlp.first.b];
  const nn::Matrix<T>& w2 = ps[mlp.second.w];
  const nn::Matrix<T>& b2 = ps[mlp.second.b];
  const nn::Index n = c.x.rows(), hidden = w1.cols(), width = w2.cols();
  c.pre.resize(n, hidden);
  c.act.resize(n, hidden);
  nn::Matrix<T> out(n, width);
  for (nn::Index i = 0; i < n; ++i) {
    const T x0 = c.x(i, 0), x1 = c.x(i, 1), x2 = c.x(i, 2);
    T* pre = c.pre.row(i).data();
    T* act = c.act.row(i).data();
    for (nn::Index j = 0; j < hidden; ++j) {
      pre[j] = b1(0, j) + x0 * w1(0, j) + x1 * w1(1, j) + x2 * w1(2, j);
      act[j] = nn::silu(pre[j]);
    }
    T* o = out.row(i).data();
    for (nn::Index j = 0; j < width; ++j) o[j] = b2(0, j);
    for (nn::Index k = 0; k < hidden; ++k) {
      const T a = act[k];
      const T* w = w2.row(k).data();
      for (nn::Index j = 0; j < width; ++j) o[j] += a * w[j];
    }
  }
  return out;
}

}  // namespace

std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, int k) {
  std::vector<std::size_t> picks;
  if (cloud.empty() || k < 1) return picks;
  const std::size_t count = std::min(cloud.size(), static_cast<std::size_t>(k));
  std::size_t first = 0;
  for (std::size_t i = 1; i < cloud.size(); ++i) {
    if (lex_less(cloud[i], cloud[first])) first = i;
  }
  picks.push_back(first);
  std::vector<double> dist(cloud.size(), std::numeric_limits<double>::infinity());
  while (picks.size() < count) {
    const Vec3& last = cloud[picks.back()];
    std::size_t best = 0;
    double best_d = -1;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      dist[i] = std::min(dist[i], kernels::squared_distance(cloud[i], last));
      if (dist[i] > best_d || (dist[i] == best_d && lex_less(cloud[i], cloud[best]))) {
        best_d = dist[i];
        best = i;
      }
    }
    // Fewer distinct points than k: stop early.
    if (best_d <= 0) break;
    picks.push_back(best);
  }
  return picks;
}

PointGroups group_points(const PointCloud& cloud, int k) {
  PointGroups g;
  for (std::size_t idx : farthest_point_sample(cloud, k)) g.centers.push_back(cloud[idx]);
  g.assignment.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < g.centers.size(); ++c) {
      const double d = kernels::squared_distance(cloud[i], g.centers[c]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    g.assignment[i] = best;
  }
  return g;
}

template <typename T>
PointEncoder<T> PointEncoder<T>::create(nn::ParameterSet<T>& ps, const std::string& name, int hidden, int width) {
  return {nn::Mlp<T>::create(ps, name + ".point_mlp", 3, hidden, width), nn::Linear<T>::create(ps, name + ".center", 3, width)};
}

template <typename T>
nn::Matrix<T> PointEncoder<T>::forward(const nn::ParameterSet<T>& ps, const PointCloud& cloud, const PointGroups& groups,
                                       PointEncoderCache<T>* cache) const {
  typename nn::Mlp<T>::Cache local_cache;
  local_cache.x = to_matrix<T>(cloud);
  const nn::Matrix<T> feats = pointwise_features(ps, mlp, local_cache);
  const nn::Index width = feats.cols();
  const int k = static_cast<int>(groups.centers.size());
  nn::Matrix<T> tokens = nn::Matrix<T>::Constant(k, width, -std::numeric_limits<T>::infinity());
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(k * width), -1);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int g = groups.assignment[i];
    for (nn::Index j = 0; j < width; ++j) {
      const T v = feats(static_cast<nn::Index>(i), j);
      if (v > tokens(g, j)) {
        tokens(g, j) = v;
        argmax[static_cast<std::size_t>(g * width + j)] = static_cast<Eigen::Index>(i);
      }
    }
  }
  nn::Matrix<T> centers;
  if (k > 1) {
    centers = to_matrix<T>(groups.centers);
    tokens += center.forward(ps, centers);
  }
  if (cache) {
    cache->mlp = std::move(local_cache);
    cache->centers = std::move(centers);
    cache->argmax = std::move(argmax);
    cache->groups = k;
  }
  return tokens;
}

template <typename T>
void PointEncoder<T>::backward(const nn::ParameterSet<T>& ps, nn::ParameterSet<T>& grads, const PointEncoderCache<T>& c,
                               const nn::Matrix<T>& dtokens) const {
  const nn::Index width = dtokens.cols();
  nn::Matrix<T> dfeats = nn::Matrix<T>::Zero(c.mlp.x.rows(), width);
  for (int g = 0; g < c.groups; ++g) {
    for (nn::Index j = 0; j < width; ++j) {
      const Eigen::Index i = c.argmax[static_cast<std::size_t>(g * width + j)];
      if (i >= 0) dfeats(i, j) += dtokens(g, j);
    }
  }
  mlp.backward(ps, grads, c.mlp, dfeats);
  if (c.groups > 1) center.backward(ps, grads, c.centers, dtokens);
}

template <typename T>
ConditionEncoders<T>::ConditionEncoders(nn::ParameterSet<T>& ps, const EncoderSettings& settings) : settings_(settings) {
  geometry_ = PointEncoder<T>::create(ps, "cond.geometry", settings.hidden, settings.width);
  local_ = PointEncoder<T>::create(ps, "cond.local", settings.hidden, settings.width);
  global_ = PointEncoder<T>::create(ps, "cond.global", settings.hidden, settings.width);
  empty_ = ps.add("cond.empty", 1, settings.width);
}

template <typename T>
nn::Matrix<T> ConditionEncoders<T>::encode_points(const nn::ParameterSet<T>& ps, const PointCloud& cloud, int k) const {
  if (cloud.empty()) return ps[empty_];
  return global_.forward(ps, cloud, group_points(cloud, k), nullptr);
}

template <typename T>
nn::Matrix<T> ConditionEncoders<T>::encode_geometry(const nn::ParameterSet<T>& ps, const PointCloud& cloud) const {
  if (cloud.empty()) return ps[empty_];
  return geometry_.forward(ps, cloud, group_points(cloud, 1), nullptr);
}

template <typename T>
nn::Matrix<T> ConditionEncoders<T>::encode_local(const nn::ParameterSet<T>& ps, const std::optional<PointCloud>& normalized) const {
  if (!normalized || normalized->empty()) return ps[empty_];
  return local_.forward(ps, *normalized, group_points(*normalized, settings_.k_local), nullptr);
}

template <typename T>
nn::Matrix<T> ConditionEncoders<T>::encode_global(const nn::ParameterSet<T>& ps, const PointCloud& scene) const {
  if (scene.empty()) return ps[empty_];
  return global_.forward(ps, scene, group_points(scene, settings_.k_global), nullptr);
}

template <typename T>
EncodedConditions<T> ConditionEncoders<T>::encode(const nn::ParameterSet<T>& ps, const ConditionInput& input,
                                                  ConditionCache<T>* cache) const {
  const int n = input.objects();
  if (static_cast<int>(input.local.size()) != n) throw ConfigError("condition input: local list length differs from object count");
  if (input.global.size() != input.global_owner.size()) throw ConfigError("condition input: global owner length mismatch");
  const nn::Index width = settings_.width;
  EncodedConditions<T> out;
  out.geometry.resize(n, width);
  if (cache) {
    cache->geometry.assign(static_cast<std::size_t>(n), {});
    cache->local.assign(static_cast<std::size_t>(n), std::nullopt);
    cache->local_offset.assign(static_cast<std::size_t>(n), 0);
  }
  for (int i = 0; i < n; ++i) {
    const PointCloud& g = input.geometry[static_cast<std::size_t>(i)];
    if (g.empty()) throw DegenerateGeometryError("condition input: empty canonical geometry");
    out.geometry.row(i) =
        geometry_.forward(ps, g, group_points(g, 1), cache ? &cache->geometry[static_cast<std::size_t>(i)] : nullptr);
  }

  std::vector<nn::Matrix<T>> blocks;
  nn::Index rows = 0;
  if (!input.global.empty()) {
    const PointGroups groups = group_points(input.global, settings_.k_global);
    blocks.push_back(global_.forward(ps, input.global, groups, cache ? &cache->global : nullptr));
    // Majority owner per group, ties to the lower object index.
    std::vector<std::map<int, int>> votes(groups.centers.size());
    for (std::size_t p = 0; p < input.global.size(); ++p) {
      ++votes[static_cast<std::size_t>(groups.assignment[p])][static_cast<int>(input.global_owner[p])];
    }
    for (const auto& v : votes) {
      int best = 0, best_count = -1;
      for (const auto& [obj, count] : v) {
        if (count > best_count) {
          best = obj;
          best_count = count;
        }
      }
      out.layout.kind.push_back(ConditionKeys::Kind::Global);
      out.layout.owner.push_back(best);
      out.key_position.push_back(best);
    }
    rows += blocks.back().rows();
  } else if (cache) {
    cache->global.groups = 0;
  }
  for (int i = 0; i < n; ++i) {
    const auto& local = input.local[static_cast<std::size_t>(i)];
    if (cache) cache->local_offset[static_cast<std::size_t>(i)] = static_cast<int>(rows);
    if (local && !local->empty()) {
      if (cache) cache->local[static_cast<std::size_t>(i)].emplace();
      blocks.push_back(local_.forward(ps, *local, group_points(*local, settings_.k_local),
                                      cache ? &*cache->local[static_cast<std::size_t>(i)] : nullptr));
    } else {
      blocks.push_back(ps[empty_]);
    }
    for (nn::Index r = 0; r < blocks.back().rows(); ++r) {
      out.layout.kind.push_back(ConditionKeys::Kind::Local);
      out.layout.owner.push_back(i);
      out.key_position.push_back(i);
    }
    rows += blocks.back().rows();
  }
  nn::Matrix<T> raw(rows, width);
  nn::Index at = 0;
  for (const auto& b : blocks) {
    raw.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  out.keys = nn::layer_norm<T>(raw, cache ? &cache->keys_norm : nullptr);
  return out;
}

template <typename T>
void ConditionEncoders<T>::backward(const nn::ParameterSet<T>& ps, nn::ParameterSet<T>& grads, const ConditionInput& input,
                                    const ConditionCache<T>& cache, const nn::Matrix<T>& dgeometry,
                                    const nn::Matrix<T>& dkeys) const {
  const int n = input.objects();
  for (int i = 0; i < n; ++i) geometry_.backward(ps, grads, cache.geometry[static_cast<std::size_t>(i)], dgeometry.row(i));
  const nn::Matrix<T> draw = nn::layer_norm_backward(cache.keys_norm, dkeys);
  nn::Index at = 0;
  if (!input.global.empty()) {
    global_.backward(ps, grads, cache.global, draw.topRows(cache.global.groups));
    at = cache.global.groups;
  }
  for (int i = 0; i < n; ++i) {
    at = cache.local_offset[static_cast<std::size_t>(i)];
    const auto& lc = cache.local[static_cast<std::size_t>(i)];
    if (lc) {
      local_.backward(ps, grads, *lc, draw.middleRows(at, lc->groups));
    } else {
      grads[empty_] += draw.row(at);
    }
  }
}

template struct PointEncoder<float>;
template struct PointEncoder<double>;
template class ConditionEncoders<float>;
template class ConditionEncoders<double>;

}  // namespace scenemaker

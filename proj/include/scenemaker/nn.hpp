#pragma once

// Minimal layers with hand-written backward passes. Each layer stores only
// parameter handles; values and gradients live in ParameterSets so that
// per-thread gradient buffers can be summed after a parallel batch.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scenemaker/errors.hpp"
#include "scenemaker/rng.hpp"

namespace scenemaker::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

template <typename T>
class ParameterSet {
 public:
  std::size_t add(std::string name, Index rows, Index cols) {
    names_.push_back(std::move(name));
    values_.push_back(Matrix<T>::Zero(rows, cols));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Matrix<T>& operator[](std::size_t i) { return values_[i]; }
  const Matrix<T>& operator[](std::size_t i) const { return values_[i]; }

  std::size_t find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return i;
    }
    throw ConfigError("unknown parameter '" + std::string(name) + "'");
  }

  ParameterSet zeros_like() const {
    ParameterSet out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].rows(), values_[i].cols());
    return out;
  }

  void set_zero() {
    for (auto& v : values_) v.setZero();
  }

  ParameterSet& operator+=(const ParameterSet& other) {
    for (std::size_t i = 0; i < size(); ++i) values_[i] += other.values_[i];
    return *this;
  }

  ParameterSet& operator*=(T s) {
    for (auto& v : values_) v *= s;
    return *this;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  double squared_norm() const {
    double s = 0;
    for (const auto& v : values_) s += static_cast<double>(v.squaredNorm());
    return s;
  }

  bool all_finite() const {
    for (const auto& v : values_) {
      if (!v.allFinite()) return false;
    }
    return true;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) {
      const std::size_t j = out.add(names_[i], values_[i].rows(), values_[i].cols());
      out[j] = values_[i].template cast<U>();
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<T>> values_;
};

template <typename T>
T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}

// tanh-approximated GELU.
template <typename T>
T gelu(T x) {
  const T k = T(0.7978845608028654);
  return T(0.5) * x * (T(1) + std::tanh(k * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  const T k = T(0.7978845608028654);
  const T inner = k * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(inner);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * k * (T(1) + T(3) * T(0.044715) * x * x);
}

template <typename T>
Matrix<T> silu(const Matrix<T>& x) {
  return x.unaryExpr([](T v) { return silu(v); });
}

// dL/dx for y = silu(x).
template <typename T>
Matrix<T> silu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  return dy.cwiseProduct(x.unaryExpr([](T v) { return silu_grad(v); }));
}

template <typename T>
struct Linear {
  std::size_t w = 0, b = 0;

  static Linear create(ParameterSet<T>& ps, const std::string& name, Index in, Index out) {
    return {ps.add(name + ".weight", in, out), ps.add(name + ".bias", 1, out)};
  }

  Index in(const ParameterSet<T>& ps) const { return ps[w].rows(); }
  Index out(const ParameterSet<T>& ps) const { return ps[w].cols(); }

  Matrix<T> forward(const ParameterSet<T>& ps, const Matrix<T>& x) const {
    Matrix<T> y(x.rows(), ps[w].cols());
    y.noalias() = x * ps[w];
    y.rowwise() += ps[b].row(0);
    return y;
  }

  Matrix<T> backward(const ParameterSet<T>& ps, ParameterSet<T>& grads, const Matrix<T>& x, const Matrix<T>& dy) const {
    grads[w].noalias() += x.transpose() * dy;
    grads[b] += dy.colwise().sum();
    Matrix<T> dx(x.rows(), x.cols());
    dx.noalias() = dy * ps[w].transpose();
    return dx;
  }
};

// Linear -> SiLU -> Linear.
template <typename T>
struct Mlp {
  Linear<T> first, second;

  struct Cache {
    Matrix<T> x, pre, act;
  };

  static Mlp create(ParameterSet<T>& ps, const std::string& name, Index in, Index hidden, Index out) {
    return {Linear<T>::create(ps, name + ".fc1", in, hidden), Linear<T>::create(ps, name + ".fc2", hidden, out)};
  }

  Matrix<T> forward(const ParameterSet<T>& ps, const Matrix<T>& x, Cache* cache) const {
    Matrix<T> pre = first.forward(ps, x);
    Matrix<T> act = silu(pre);
    Matrix<T> y = second.forward(ps, act);
    if (cache) *cache = {x, std::move(pre), std::move(act)};
    return y;
  }

  Matrix<T> backward(const ParameterSet<T>& ps, ParameterSet<T>& grads, const Cache& c, const Matrix<T>& dy) const {
    const Matrix<T> dact = second.backward(ps, grads, c.act, dy);
    return first.backward(ps, grads, c.x, silu_backward(c.pre, dact));
  }
};

// Row-wise layer normalization without affine parameters.
template <typename T>
struct LayerNormCache {
  Matrix<T> y;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, LayerNormCache<T>* cache, T eps = T(1e-6)) {
  Matrix<T> y(x.rows(), x.cols());
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const T mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).matrix();
    const T var = centered.squaredNorm() / T(x.cols());
    rstd(r) = T(1) / std::sqrt(var + eps);
    y.row(r) = centered * rstd(r);
  }
  if (cache) *cache = {y, rstd};
  return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const LayerNormCache<T>& c, const Matrix<T>& dy) {
  Matrix<T> dx(dy.rows(), dy.cols());
  const T inv_n = T(1) / T(dy.cols());
  for (Index r = 0; r < dy.rows(); ++r) {
    const T mean_dy = dy.row(r).sum() * inv_n;
    const T mean_dyy = dy.row(r).dot(c.y.row(r)) * inv_n;
    dx.row(r) = c.rstd(r) * (dy.row(r).array() - mean_dy - c.y.row(r).array() * mean_dyy).matrix();
  }
  return dx;
}

// Dense boolean matrix; (r, c) true means query r may attend key c.
struct BoolMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;

  BoolMatrix() = default;
  BoolMatrix(int r, int c, bool value = false) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, value ? 1 : 0) {}

  bool operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c] != 0; }
  void set(int r, int c, bool v) { data[static_cast<std::size_t>(r) * cols + c] = v ? 1 : 0; }
  bool row_any(int r) const {
    for (int c = 0; c < cols; ++c) {
      if ((*this)(r, c)) return true;
    }
    return false;
  }
  bool col_any(int c) const {
    for (int r = 0; r < rows; ++r) {
      if ((*this)(r, c)) return true;
    }
    return false;
  }
  bool operator==(const BoolMatrix&) const = default;
};

// Rotary embedding over consecutive channel pairs inside each head.
struct Rope {
  int head_dim = 0;
  double base = 10000.0;

  template <typename T>
  void apply(Matrix<T>& m, std::span<const int> positions, bool inverse) const {
    const Index heads = m.cols() / head_dim;
    for (Index r = 0; r < m.rows(); ++r) {
      const double pos = positions[static_cast<std::size_t>(r)];
      if (pos == 0) continue;
      for (int j = 0; j < head_dim / 2; ++j) {
        const double angle = pos * std::pow(base, -2.0 * j / head_dim) * (inverse ? -1.0 : 1.0);
        const T c = T(std::cos(angle)), s = T(std::sin(angle));
        for (Index h = 0; h < heads; ++h) {
          T& a = m(r, h * head_dim + 2 * j);
          T& b = m(r, h * head_dim + 2 * j + 1);
          const T x0 = a, x1 = b;
          a = x0 * c - x1 * s;
          b = x0 * s + x1 * c;
        }
      }
    }
  }
};

template <typename T>
struct AttentionCache {
  Matrix<T> xq, xkv;
  Matrix<T> q, k, v;  // q and k after the rotary embedding
  std::vector<Matrix<T>> probs;
  Matrix<T> o;
  std::vector<std::uint8_t> row_active;
};

// Multi-head attention with a boolean reachability mask. Query rows without
// any reachable key produce an exact zero output row.
template <typename T>
struct Attention {
  Linear<T> wq, wk, wv, wo;
  int heads = 1;

  static Attention create(ParameterSet<T>& ps, const std::string& name, Index width, int heads) {
    return {Linear<T>::create(ps, name + ".q", width, width), Linear<T>::create(ps, name + ".k", width, width),
            Linear<T>::create(ps, name + ".v", width, width), Linear<T>::create(ps, name + ".o", width, width), heads};
  }

  Matrix<T> forward(const ParameterSet<T>& ps, const Matrix<T>& xq, const Matrix<T>& xkv, const BoolMatrix& mask,
                    std::span<const int> pos_q, std::span<const int> pos_k, const Rope* rope,
                    AttentionCache<T>& c) const {
    const Index lq = xq.rows(), lk = xkv.rows(), width = xq.cols(), dh = width / heads;
    c.xq = xq;
    c.xkv = xkv;
    c.q = wq.forward(ps, xq);
    c.k = wk.forward(ps, xkv);
    c.v = wv.forward(ps, xkv);
    if (rope) {
      rope->apply(c.q, pos_q, false);
      rope->apply(c.k, pos_k, false);
    }
    c.row_active.assign(static_cast<std::size_t>(lq), 0);
    for (Index r = 0; r < lq; ++r) c.row_active[static_cast<std::size_t>(r)] = mask.row_any(static_cast<int>(r)) ? 1 : 0;
    const T inv_sqrt = T(1) / std::sqrt(T(dh));
    c.probs.assign(static_cast<std::size_t>(heads), Matrix<T>());
    c.o = Matrix<T>::Zero(lq, width);
    for (int h = 0; h < heads; ++h) {
      Matrix<T> s(lq, lk);
      s.noalias() = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose();
      s *= inv_sqrt;
      for (Index r = 0; r < lq; ++r) {
        if (!c.row_active[static_cast<std::size_t>(r)]) {
          s.row(r).setZero();
          continue;
        }
        T mx = -std::numeric_limits<T>::infinity();
        for (Index col = 0; col < lk; ++col) {
          if (mask(static_cast<int>(r), static_cast<int>(col))) mx = std::max(mx, s(r, col));
        }
        T sum = 0;
        for (Index col = 0; col < lk; ++col) {
          const T e = mask(static_cast<int>(r), static_cast<int>(col)) ? std::exp(s(r, col) - mx) : T(0);
          s(r, col) = e;
          sum += e;
        }
        s.row(r) /= sum;
      }
      c.o.middleCols(h * dh, dh).noalias() = s * c.v.middleCols(h * dh, dh);
      c.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    Matrix<T> y = wo.forward(ps, c.o);
    for (Index r = 0; r < lq; ++r) {
      if (!c.row_active[static_cast<std::size_t>(r)]) y.row(r).setZero();
    }
    return y;
  }

  // Accumulates parameter gradients; returns input gradients through dxq/dxkv.
  void backward(const ParameterSet<T>& ps, ParameterSet<T>& grads, const AttentionCache<T>& c,
                std::span<const int> pos_q, std::span<const int> pos_k, const Rope* rope, const Matrix<T>& dy_in,
                Matrix<T>& dxq, Matrix<T>& dxkv) const {
    const Index lq = c.xq.rows(), width = c.xq.cols(), dh = width / heads;
    Matrix<T> dy = dy_in;
    for (Index r = 0; r < lq; ++r) {
      if (!c.row_active[static_cast<std::size_t>(r)]) dy.row(r).setZero();
    }
    const Matrix<T> d_o = wo.backward(ps, grads, c.o, dy);
    const T inv_sqrt = T(1) / std::sqrt(T(dh));
    Matrix<T> dq = Matrix<T>::Zero(c.q.rows(), c.q.cols());
    Matrix<T> dk = Matrix<T>::Zero(c.k.rows(), c.k.cols());
    Matrix<T> dv = Matrix<T>::Zero(c.v.rows(), c.v.cols());
    for (int h = 0; h < heads; ++h) {
      const Matrix<T>& p = c.probs[static_cast<std::size_t>(h)];
      const auto doh = d_o.middleCols(h * dh, dh);
      Matrix<T> dp(p.rows(), p.cols());
      dp.noalias() = doh * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() += p.transpose() * doh;
      Matrix<T> ds = p.cwiseProduct(dp);
      const Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot = ds.rowwise().sum();
      ds -= p.cwiseProduct(row_dot.replicate(1, p.cols()));
      ds *= inv_sqrt;
      dq.middleCols(h * dh, dh).noalias() += ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() += ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    if (rope) {
      rope->apply(dq, pos_q, true);
      rope->apply(dk, pos_k, true);
    }
    dxq = wq.backward(ps, grads, c.xq, dq);
    dxkv = wk.backward(ps, grads, c.xkv, dk);
    dxkv += wv.backward(ps, grads, c.xkv, dv);
  }
};

template <typename T>
void init_normal(Matrix<T>& m, double stddev, Rng& rng) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = T(rng.normal() * stddev);
}

// Adam with decoupled weight decay.
template <typename T>
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  Adam(const ParameterSet<T>& params, Options opt) : opt_(opt), m_(params.zeros_like()), v_(params.zeros_like()) {}

  void step(ParameterSet<T>& params, const ParameterSet<T>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, t_);
    const double c2 = 1.0 - std::pow(opt_.beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& m = m_[i];
      auto& v = v_[i];
      const auto& g = grads[i];
      m = T(opt_.beta1) * m + T(1 - opt_.beta1) * g;
      v = T(opt_.beta2) * v + T(1 - opt_.beta2) * g.cwiseProduct(g);
      auto& p = params[i];
      if (opt_.weight_decay > 0) p *= T(1 - lr * opt_.weight_decay);
      p.array() -= T(lr) * (m.array() / T(c1)) / ((v.array() / T(c2)).sqrt() + T(opt_.eps));
    }
  }

  long steps() const { return t_; }

 private:
  Options opt_;
  ParameterSet<T> m_, v_;
  long t_ = 0;
};

}  // namespace scenemaker::nn

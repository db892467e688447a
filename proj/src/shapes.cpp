#include "scenemaker/shapes.hpp"

#include <cmath>
#include <numeric>

#include "scenemaker/errors.hpp"
#include "scenemaker/rng.hpp"

namespace scenemaker {

namespace {

struct Sample {
  Vec3 p;
  Vec3 n;
};

// Axis-aligned rectangle face of a box: fixed axis/value, spans the other two.
struct Face {
  int axis;
  double value;
  double sign;
  Vec3 lo;
  Vec3 hi;
  double area;
};

std::vector<Face> box_faces(const Vec3& lo, const Vec3& hi) {
  std::vector<Face> faces;
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3;
    const int v = (axis + 2) % 3;
    const double area = (hi[u] - lo[u]) * (hi[v] - lo[v]);
    faces.push_back({axis, lo[axis], -1.0, lo, hi, area});
    faces.push_back({axis, hi[axis], 1.0, lo, hi, area});
  }
  return faces;
}

Sample sample_face(const Face& f, Rng& rng) {
  Sample s;
  for (int k = 0; k < 3; ++k) s.p[k] = rng.uniform(f.lo[k], f.hi[k]);
  s.p[f.axis] = f.value;
  s.n = Vec3::Zero();
  s.n[f.axis] = f.sign;
  return s;
}

std::size_t pick_weighted(const std::vector<double>& weights, Rng& rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

struct FaceSet {
  std::vector<Face> faces;
  std::vector<double> weights;

  void add(const std::vector<Face>& more) {
    for (const Face& f : more) {
      faces.push_back(f);
      weights.push_back(f.area);
    }
  }
  Sample draw(Rng& rng) const { return sample_face(faces[pick_weighted(weights, rng)], rng); }
};

Sample sample_sphere(const ShapeSpec& s, Rng& rng) {
  Vec3 d(rng.normal(), rng.normal(), rng.normal());
  while (d.norm() < 1e-12) d = Vec3(rng.normal(), rng.normal(), rng.normal());
  d.normalize();
  return {d * s.params[0], d};
}

Sample sample_cylinder(const ShapeSpec& s, Rng& rng) {
  const double r = s.params[0], h = s.params[1];
  const double lateral = 2 * M_PI * r * h, cap = M_PI * r * r;
  const std::size_t part = pick_weighted({lateral, cap, cap}, rng);
  const double phi = rng.uniform(0, 2 * M_PI);
  if (part == 0) {
    const Vec3 n(std::cos(phi), std::sin(phi), 0);
    return {Vec3(r * n.x(), r * n.y(), rng.uniform(-h / 2, h / 2)), n};
  }
  const double rho = r * std::sqrt(rng.uniform());
  const double z = part == 1 ? h / 2 : -h / 2;
  return {Vec3(rho * std::cos(phi), rho * std::sin(phi), z), Vec3(0, 0, part == 1 ? 1.0 : -1.0)};
}

Sample sample_cone(const ShapeSpec& s, Rng& rng) {
  const double r = s.params[0], h = s.params[1];
  const double slant = std::sqrt(r * r + h * h);
  const std::size_t part = pick_weighted({M_PI * r * slant, M_PI * r * r}, rng);
  const double phi = rng.uniform(0, 2 * M_PI);
  if (part == 0) {
    // Distance from the apex grows with sqrt(u) for uniform area density.
    const double frac = std::sqrt(rng.uniform());
    const Vec3 p(frac * r * std::cos(phi), frac * r * std::sin(phi), h / 2 - frac * h);
    const Vec3 n = Vec3(h * std::cos(phi), h * std::sin(phi), r).normalized();
    return {p, n};
  }
  const double rho = r * std::sqrt(rng.uniform());
  return {Vec3(rho * std::cos(phi), rho * std::sin(phi), -h / 2), Vec3(0, 0, -1)};
}

Sample sample_torus(const ShapeSpec& s, Rng& rng) {
  const double big = s.params[0], small = s.params[1];
  // Area element is proportional to (R + r cos(theta)); rejection on theta.
  double theta = 0;
  for (;;) {
    theta = rng.uniform(0, 2 * M_PI);
    if (rng.uniform() * (big + small) <= big + small * std::cos(theta)) break;
  }
  const double phi = rng.uniform(0, 2 * M_PI);
  const Vec3 n(std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi), std::sin(theta));
  const Vec3 p((big + small * std::cos(theta)) * std::cos(phi), (big + small * std::cos(theta)) * std::sin(phi),
               small * std::sin(theta));
  return {p, n};
}

// L-shaped prism: arm A spans [0,ax]x[0,t], arm B spans [0,t]x[t,by], both
// extruded over [0,h]. The shared face y=t, x<t is interior and rejected.
FaceSet ell_faces(const ShapeSpec& s) {
  const double ax = s.params[0], by = s.params[1], t = s.params[2], h = s.params[3];
  FaceSet set;
  set.add(box_faces(Vec3(0, 0, 0), Vec3(ax, t, h)));
  set.add(box_faces(Vec3(0, t, 0), Vec3(t, by, h)));
  return set;
}

Sample sample_ell(const ShapeSpec& s, const FaceSet& faces, Rng& rng) {
  const double t = s.params[2];
  for (;;) {
    Sample smp = faces.draw(rng);
    if (smp.p.y() == t && smp.p.x() < t) continue;
    return smp;
  }
}

void analytic_bounds(const ShapeSpec& s, Vec3& lo, Vec3& hi) {
  const auto& p = s.params;
  switch (s.kind) {
    case ShapeKind::Box: hi = Vec3(p[0], p[1], p[2]) / 2; lo = -hi; return;
    case ShapeKind::Sphere: hi = Vec3::Constant(p[0]); lo = -hi; return;
    case ShapeKind::Cylinder:
    case ShapeKind::Cone: hi = Vec3(p[0], p[0], p[1] / 2); lo = -hi; return;
    case ShapeKind::Torus: hi = Vec3(p[0] + p[1], p[0] + p[1], p[1]); lo = -hi; return;
    case ShapeKind::EllShape: lo = Vec3::Zero(); hi = Vec3(p[0], p[1], p[3]); return;
  }
}

std::size_t param_count(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Box: return 3;
    case ShapeKind::Sphere: return 1;
    case ShapeKind::Cylinder:
    case ShapeKind::Cone:
    case ShapeKind::Torus: return 2;
    case ShapeKind::EllShape: return 4;
  }
  return 0;
}

}  // namespace

std::string_view shape_kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Box: return "box";
    case ShapeKind::Cylinder: return "cylinder";
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::EllShape: return "ell-shape";
    case ShapeKind::Cone: return "cone";
    case ShapeKind::Torus: return "torus";
  }
  return "?";
}

ShapeKind shape_kind_from_name(std::string_view name) {
  for (ShapeKind k : kAllShapeKinds) {
    if (shape_kind_name(k) == name) return k;
  }
  throw ConfigError("unknown shape kind '" + std::string(name) + "'");
}

void validate(const ShapeSpec& spec) {
  if (spec.params.size() != param_count(spec.kind)) {
    throw ConfigError("shape '" + std::string(shape_kind_name(spec.kind)) + "' expects " +
                      std::to_string(param_count(spec.kind)) + " parameters");
  }
  for (double v : spec.params) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("shape parameters must be positive and finite");
  }
  if (spec.sample_count < 64) throw ConfigError("shape sample count must be at least 64");
  if (spec.kind == ShapeKind::Torus && !(spec.params[1] < spec.params[0])) {
    throw ConfigError("torus minor radius must be below the major radius");
  }
  if (spec.kind == ShapeKind::EllShape && !(spec.params[2] < spec.params[0] && spec.params[2] < spec.params[1])) {
    throw ConfigError("ell-shape thickness must be below both arm lengths");
  }
}

SampledShape sample_surface(const ShapeSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  Vec3 lo, hi;
  analytic_bounds(spec, lo, hi);
  const Vec3 mid = 0.5 * (lo + hi);
  const double scale = 1.0 / (hi - lo).maxCoeff();

  SampledShape out;
  out.spec = spec;
  out.points.reserve(static_cast<std::size_t>(spec.sample_count));
  out.normals.reserve(static_cast<std::size_t>(spec.sample_count));
  FaceSet faces;
  if (spec.kind == ShapeKind::Box) faces.add(box_faces(lo, hi));
  if (spec.kind == ShapeKind::EllShape) faces = ell_faces(spec);
  for (int i = 0; i < spec.sample_count; ++i) {
    Sample s;
    switch (spec.kind) {
      case ShapeKind::Box: s = faces.draw(rng); break;
      case ShapeKind::Sphere: s = sample_sphere(spec, rng); break;
      case ShapeKind::Cylinder: s = sample_cylinder(spec, rng); break;
      case ShapeKind::Cone: s = sample_cone(spec, rng); break;
      case ShapeKind::Torus: s = sample_torus(spec, rng); break;
      case ShapeKind::EllShape: s = sample_ell(spec, faces, rng); break;
    }
    out.points.push_back((s.p - mid) * scale);
    out.normals.push_back(s.n);
  }
  return out;
}

SampledShape sample_shape(std::uint64_t seed, const ShapeDistribution& dist, int sample_count) {
  Rng rng(seed);
  const std::vector<double> w(dist.begin(), dist.end());
  const ShapeKind kind = kAllShapeKinds[pick_weighted(w, rng)];
  ShapeSpec spec{kind, {}, sample_count};
  switch (kind) {
    case ShapeKind::Box: spec.params = {rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0)}; break;
    case ShapeKind::Sphere: spec.params = {0.5}; break;
    case ShapeKind::Cylinder: spec.params = {rng.uniform(0.2, 0.5), rng.uniform(0.3, 1.0)}; break;
    case ShapeKind::Cone: spec.params = {rng.uniform(0.2, 0.5), rng.uniform(0.4, 1.0)}; break;
    case ShapeKind::Torus: spec.params = {rng.uniform(0.3, 0.5), rng.uniform(0.08, 0.2)}; break;
    case ShapeKind::EllShape:
      spec.params = {rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0), rng.uniform(0.2, 0.4), rng.uniform(0.3, 1.0)};
      break;
  }
  return sample_surface(spec, rng.next());
}

}  // namespace scenemaker

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "scenemaker/geometry.hpp"

namespace scenemaker {

enum class ShapeKind { Box, Cylinder, Sphere, EllShape, Cone, Torus };

inline constexpr std::array<ShapeKind, 6> kAllShapeKinds = {ShapeKind::Box,      ShapeKind::Cylinder, ShapeKind::Sphere,
                                                            ShapeKind::EllShape, ShapeKind::Cone,     ShapeKind::Torus};

std::string_view shape_kind_name(ShapeKind kind);
// Throws ConfigError for unknown names.
ShapeKind shape_kind_from_name(std::string_view name);

// Primitive parameters, in the primitive's own units before normalization:
//   box       {ex, ey, ez}
//   cylinder  {radius, height}
//   sphere    {radius}
//   ell-shape {arm_x, arm_y, thickness, height}
//   cone      {radius, height}
//   torus     {major_radius, minor_radius}
struct ShapeSpec {
  ShapeKind kind = ShapeKind::Box;
  std::vector<double> params;
  int sample_count = 20000;
};

struct SampledShape {
  ShapeSpec spec;
  // Surface samples normalized to the unit cube about the origin (largest
  // extent 1), with outward unit normals.
  PointCloud points;
  PointCloud normals;
};

// Relative draw weights over kAllShapeKinds.
using ShapeDistribution = std::array<double, 6>;
inline constexpr ShapeDistribution kUniformShapes = {1, 1, 1, 1, 1, 1};

// Throws ConfigError on non-positive parameters or sample_count < 64.
void validate(const ShapeSpec& spec);

// Uniform-by-area surface samples of `spec`, deterministic in `seed`.
SampledShape sample_surface(const ShapeSpec& spec, std::uint64_t seed);

// Draws a primitive kind and its parameters from `dist`, then samples it.
SampledShape sample_shape(std::uint64_t seed, const ShapeDistribution& dist = kUniformShapes, int sample_count = 20000);

}  // namespace scenemaker

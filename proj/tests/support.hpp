#pragma once

// Shared fixtures and brute-force oracles for the unit tests. The oracles
// are written independently of the library code they check.

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "scenemaker/geometry.hpp"
#include "scenemaker/rng.hpp"

namespace testing {

using scenemaker::PointCloud;
using scenemaker::Vec3;

inline PointCloud random_cloud(std::uint64_t seed, int n, double lo = -1.0, double hi = 1.0) {
  scenemaker::Rng rng(seed);
  PointCloud out;
  for (int i = 0; i < n; ++i) out.emplace_back(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi));
  return out;
}

inline double oracle_nearest_squared(const Vec3& q, const PointCloud& ref) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& r : ref) {
    const double d = (q - r).squaredNorm();
    if (d < best) best = d;
  }
  return best;
}

inline double oracle_chamfer(const PointCloud& a, const PointCloud& b) {
  double sa = 0, sb = 0;
  for (const Vec3& p : a) sa += oracle_nearest_squared(p, b);
  for (const Vec3& p : b) sb += oracle_nearest_squared(p, a);
  return sa / double(a.size()) + sb / double(b.size());
}

inline double oracle_fscore(const PointCloud& a, const PointCloud& b, double tau) {
  int pa = 0, pb = 0;
  for (const Vec3& p : a) pa += std::sqrt(oracle_nearest_squared(p, b)) <= tau;
  for (const Vec3& p : b) pb += std::sqrt(oracle_nearest_squared(p, a)) <= tau;
  const double precision = double(pa) / double(a.size());
  const double recall = double(pb) / double(b.size());
  if (precision + recall == 0) return 0;
  return 2 * precision * recall / (precision + recall);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("scenemaker_test_" + tag + "_" + std::to_string(scenemaker::fnv1a64(tag) ^ counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  static unsigned long long& counter() {
    static unsigned long long c = 0;
    return c;
  }
  std::filesystem::path path_;
};

}  // namespace testing

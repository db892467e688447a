#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace scenemaker {

// Stable 64-bit FNV-1a; used for seed derivation and dataset fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL) noexcept;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Seed of the stochastic component at `path` (e.g. "dataset/scene/17").
// Streams of existing components never change when new paths are added.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view path) noexcept;

// Thin wrapper over mt19937_64. Distributions are computed here rather than
// through <random> distributions so the streams do not depend on the
// standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);
  int integer(int lo, int hi_inclusive) { return lo + static_cast<int>(index(static_cast<std::uint64_t>(hi_inclusive - lo + 1))); }
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace scenemaker

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace radfl {

/// Stage seeds are derived as hash(root, stage_name, indices...) so that
/// adding a stage or a protocol to a sweep never shifts another stage's draws.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage,
                          std::initializer_list<std::uint64_t> indices = {});

/// 64-bit FNV-1a, used for stage names and config hashes.
std::uint64_t fnv1a64(std::string_view bytes);

/// Thin wrapper over mt19937_64. Uniforms and normals are produced from raw
/// engine output so that streams are identical across standard libraries
/// (the <random> distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal via Box-Muller (one draw per call, second value discarded).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace radfl

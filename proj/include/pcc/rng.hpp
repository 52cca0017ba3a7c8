#pragma once

#include <cstdint>
#include <string_view>

namespace pcc {

// Deterministic counter-based stream built on SplitMix64. Streams are derived
// from (seed, purpose, a, b) so every consumer (data generation, init,
// reparameterization noise, curvature noise, control) owns an independent
// sequence and runs are bit-reproducible regardless of call interleaving.
// No <random> distributions anywhere: their outputs differ across stdlibs.
class RngStream {
 public:
  explicit RngStream(uint64_t key) : state_(key) {}

  static RngStream derive(uint64_t seed, std::string_view purpose,
                          uint64_t a = 0, uint64_t b = 0);

  uint64_t next_u64();

  // Uniform on [0, 1), 53-bit resolution.
  double uniform01();

  double uniform(double lo, double hi);

  // Standard normal via Box-Muller; the paired draw is cached.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace pcc

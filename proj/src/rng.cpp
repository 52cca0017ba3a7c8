#include "pcc/rng.hpp"

#include <cmath>
#include <numbers>

namespace pcc {
namespace {

uint64_t splitmix64(uint64_t& s) {
  s += 0x9E3779B97F4A7C15ull;
  uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

RngStream RngStream::derive(uint64_t seed, std::string_view purpose,
                            uint64_t a, uint64_t b) {
  uint64_t s = seed;
  uint64_t key = splitmix64(s);
  s ^= fnv1a(purpose);
  key ^= splitmix64(s);
  s ^= a * 0x9E3779B97F4A7C15ull + 1;
  key ^= splitmix64(s);
  s ^= b * 0xC2B2AE3D27D4EB4Full + 1;
  key ^= splitmix64(s);
  return RngStream(key);
}

uint64_t RngStream::next_u64() { return splitmix64(state_); }

double RngStream::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform01();
}

double RngStream::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  // u1 in (0,1] so the log is finite.
  double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  double u2 = uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  double t = 2.0 * std::numbers::pi * u2;
  cached_ = r * std::sin(t);
  has_cached_ = true;
  return r * std::cos(t);
}

}  // namespace pcc

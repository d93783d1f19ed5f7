#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace fateseg {

// 64-bit FNV-1a. Used for stream keys and for file/buffer checksums in manifests.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline uint64_t splitmix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

// Counter-based generator: value i of a stream is a pure function of
// (stream name, seed, i). Pure 64-bit integer arithmetic, so every platform
// and every thread schedule reproduces the same weights.
class DetRng {
 public:
  DetRng(std::string_view name, uint64_t seed)
      : key_(fnv1a64(name) ^ (seed * 0x9e3779b97f4a7c15ull)) {}

  uint64_t next_u64() {
    ++counter_;
    return splitmix64(key_ + counter_ * 0x9e3779b97f4a7c15ull);
  }

  // Uniform in [0, 1), 53 bits of mantissa.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1], safe for log().
  double next_double_open() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller.
  double next_normal() {
    double u1 = next_double_open();
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Truncated normal, |z| <= 2 before scaling. The weight-init convention
  // everywhere in this engine: std 0.02 unless stated otherwise.
  float next_trunc_normal(double stddev) {
    double z;
    do {
      z = next_normal();
    } while (std::abs(z) > 2.0);
    return static_cast<float>(z * stddev);
  }

  // Uniform integer in [lo, hi] inclusive, rejection-sampled.
  int64_t next_int(int64_t lo, int64_t hi) {
    uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return lo + static_cast<int64_t>(x % range);
  }

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace fateseg

#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace irk {

// Deterministic, platform-independent generator (splitmix64 core).
// std:: distributions are implementation-defined, so everything that must
// reproduce bitwise across builds goes through this class.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) { return int(next_u64() % uint64_t(n)); }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // Normal(0, std) rejected outside 2 std.
  double trunc_normal(double std_dev) {
    for (;;) {
      double x = normal();
      if (x > -2.0 && x < 2.0) return x * std_dev;
    }
  }

  // Derive an independent child stream. Forking does not disturb this
  // generator's own sequence.
  Rng fork(uint64_t stream) const {
    uint64_t z = state_ ^ (0xd1342543de82ef95ull * (stream + 1));
    z = (z ^ (z >> 33)) * 0xff51afd7ed558ccdull;
    z = (z ^ (z >> 33)) * 0xc4ceb9fe1a85ec53ull;
    return Rng(z ^ (z >> 33));
  }

 private:
  uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// FNV-1a over raw bytes; used for content-keyed caches and file checksums.
inline uint64_t fnv1a64(const void* data, size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace irk

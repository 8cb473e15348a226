#pragma once

#include <cmath>
#include <cstdint>

namespace hoflow {

// Deterministic, platform-independent generator (splitmix64 core).
// std::mt19937 + distributions are not bit-stable across standard libraries,
// and every pipeline stage here must reproduce byte-identical outputs from a
// seed, so we keep our own small generator.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  // standard normal via Box-Muller
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  float normalf() { return static_cast<float>(normal()); }
  float uniformf() { return static_cast<float>(uniform()); }

  // Independent substream; used to give each sequence/step its own stream.
  Rng fork(uint64_t salt) {
    uint64_t z = state_ ^ (0xD1B54A32D192ED03ULL * (salt + 1));
    return Rng(z ^ 0x8CB92BA72F3D8DD7ULL);
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hoflow

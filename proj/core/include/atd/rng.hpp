#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace atd {

// Deterministic random source. All distribution transforms are implemented
// here rather than with std::*_distribution so that a fixed seed produces
// the same stream on every standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller, one spare cached.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Normal(0, stddev^2) with rejection outside [-2*stddev, 2*stddev].
  double truncated_normal(double stddev);

  // Uniform integer in [lo, hi).
  int randint(int lo, int hi);

  template <class T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates, fixed traversal order.
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(randint(0, static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Exact textual state for checkpointing.
  std::string serialize() const;
  static Rng deserialize(const std::string& text);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes two 64-bit values into a fresh seed (splitmix64 finalizer).
uint64_t mix_seed(uint64_t a, uint64_t b);

}  // namespace atd

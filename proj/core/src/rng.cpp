#include "atd/rng.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "atd/errors.hpp"

namespace atd {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on (0,1] uniforms so log() never sees zero.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

double Rng::truncated_normal(double stddev) {
  for (;;) {
    double v = normal();
    if (v >= -2.0 && v <= 2.0) return v * stddev;
  }
}

int Rng::randint(int lo, int hi) {
  if (hi <= lo) throw ContractError("Rng::randint: empty range");
  uint64_t span = static_cast<uint64_t>(hi - lo);
  return lo + static_cast<int>(engine_() % span);
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
  // Spare stored as raw bits so the round trip is exact.
  uint64_t bits;
  static_assert(sizeof(bits) == sizeof(spare_));
  std::memcpy(&bits, &spare_, sizeof(bits));
  os << bits;
  return os.str();
}

Rng Rng::deserialize(const std::string& text) {
  Rng r(0);
  std::istringstream is(text);
  int has_spare = 0;
  uint64_t bits = 0;
  is >> r.engine_ >> has_spare >> bits;
  if (!is) throw DataError("Rng::deserialize: malformed state string");
  r.has_spare_ = has_spare != 0;
  std::memcpy(&r.spare_, &bits, sizeof(bits));
  return r;
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace atd

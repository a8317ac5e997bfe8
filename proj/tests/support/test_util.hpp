#pragma once

#include <cmath>
#include <cstdint>

#include "atd/rng.hpp"
#include "atd/tensor.hpp"

namespace atdtest {

inline atd::Tensor random_tensor(atd::Shape shape, atd::Rng& rng, double scale = 1.0) {
  atd::Tensor t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

inline atd::Tensor random_uniform_tensor(atd::Shape shape, atd::Rng& rng, double lo = 0.0,
                                         double hi = 1.0) {
  atd::Tensor t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const atd::Tensor& a, const atd::Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(const atd::Tensor& a, const atd::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (size_t i = 0; i < a.numel(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace atdtest

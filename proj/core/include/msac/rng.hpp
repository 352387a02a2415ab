#pragma once

#include <cstdint>
#include <random>

#include "msac/tensor.hpp"

namespace msac {

// Seeded generator with fully specified output mapping. std::mt19937_64 is
// pinned by the standard; the double mappings below avoid std distributions,
// whose output is implementation-defined, so runs are reproducible bit for bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  // Uniform in [0, 1), 53-bit mantissa.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller, deterministic two-draw form.
  double normal();

  // Integer in [0, n).
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

  Tensor tensor(Shape shape, double lo, double hi);
  Tensor integer_tensor(Shape shape, int lo, int hi);  // inclusive bounds

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace msac

#include "msac/rng.hpp"

#include <cmath>

namespace msac {

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

Tensor Rng::tensor(Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
  return t;
}

Tensor Rng::integer_tensor(Shape shape, int lo, int hi) {
  Tensor t(std::move(shape));
  std::size_t span = static_cast<std::size_t>(hi - lo) + 1;
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<double>(lo + static_cast<int>(below(span)));
  return t;
}

}  // namespace msac

#include "towl/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "towl/error.hpp"
#include "towl/numerics.hpp"

namespace towl {

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double phi = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(phi);
  has_spare_ = true;
  return r * std::cos(phi);
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw DomainError("uniform_index: empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  // rejection keeps the draw unbiased
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw = engine_();
  while (draw >= limit) draw = engine_();
  return static_cast<std::size_t>(draw % bound);
}

Mat Rng::normal_matrix(std::size_t rows, std::size_t cols) {
  Mat m(rows, cols);
  for (double& v : m.data()) v = normal();
  return m;
}

Mat Rng::uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi) {
  Mat m(rows, cols);
  for (double& v : m.data()) v = uniform(lo, hi);
  return m;
}

}  // namespace towl

#include "dcsmc/random.hpp"

#include <cmath>
#include <numbers>

namespace dcsmc {

std::uint32_t Rng::next_below(std::uint32_t n) {
  if (n <= 1) return 0;
  // Rejection below the largest multiple of n keeps the draw unbiased.
  const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::uint32_t>(x % n);
}

double Rng::next_gaussian() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller; 1-u keeps the log argument in (0, 1].
  const double u1 = next_uniform();
  const double u2 = next_uniform();
  const double r = std::sqrt(-2.0 * std::log1p(-u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

double Rng::next_exponential() { return -std::log1p(-next_uniform()); }

double Rng::next_gamma(double shape) {
  if (shape < 1.0) {
    // Boost to shape+1 and scale back (Marsaglia-Tsang).
    const double u = next_uniform();
    return next_gamma(shape + 1.0) * std::pow(u <= 0.0 ? 5e-324 : u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = next_gaussian();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = next_uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double Rng::next_beta(double a, double b) {
  const double x = next_gamma(a);
  const double y = next_gamma(b);
  return x / (x + y);
}

SeedPath::SeedPath(std::uint64_t seed, const std::vector<std::uint32_t>& p)
    : master_seed(seed), path(p), key_(mix64(seed)) {
  for (std::uint32_t c : p) key_ = mix_combine(key_, c);
}

SeedPath SeedPath::child(std::uint32_t index) const {
  SeedPath out = *this;
  out.path.push_back(index);
  out.key_ = mix_combine(key_, index);
  return out;
}

}  // namespace dcsmc

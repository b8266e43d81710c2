#include "updown/init.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace updown {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

double normal(Rng& rng, double mean, double stddev) {
  double u1 = uniform(rng);
  while (u1 <= 0.0) u1 = uniform(rng);
  const double u2 = uniform(rng);
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + stddev * z;
}

std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  // rejection sampling to avoid modulo bias
  const std::uint64_t limit = span == 0 ? 0 : (~std::uint64_t{0} / span) * span;
  std::uint64_t r = rng();
  while (limit != 0 && r >= limit) r = rng();
  return lo + static_cast<std::int64_t>(span == 0 ? r : r % span);
}

Tensor glorot_uniform(std::size_t out, std::size_t in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  return uniform_tensor({out, in}, -limit, limit, rng);
}

Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

}  // namespace updown

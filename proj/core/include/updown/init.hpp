#pragma once

#include <cstdint>
#include <random>

#include "updown/tensor.hpp"

namespace updown {

using Rng = std::mt19937_64;

/// Mixes a base seed with a stream index; used to derive independent
/// per-item seeds (per scene, per run) from one user seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Uniform in [lo, hi) built from raw engine bits, so results do not depend
/// on the standard library's distribution implementation.
double uniform(Rng& rng, double lo = 0.0, double hi = 1.0);
/// Standard normal (Box-Muller on `uniform`).
double normal(Rng& rng, double mean = 0.0, double stddev = 1.0);
/// Integer in [lo, hi].
std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi);

/// Glorot-uniform for an (out x in) weight matrix.
Tensor glorot_uniform(std::size_t out, std::size_t in, Rng& rng);
Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng);

}  // namespace updown

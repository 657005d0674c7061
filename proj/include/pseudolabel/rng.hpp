#pragma once

#include <cstdint>

#include "pseudolabel/tensor.hpp"

namespace pseudolabel {

// SplitMix64 stream (Steele, Lea & Flood 2014). Each draw advances the state
// by 0x9E3779B97F4A7C15 and returns the mixed state:
//
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   z =  z ^ (z >> 31)
//
// Derived values:
//   uniform_float   (next >> 40) * 2^-24          in [0, 1)
//   uniform_double  (next >> 11) * 2^-53          in [0, 1)
//   gaussian        Box-Muller, cos branch only:  sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
//   index(n)        high 64 bits of next * n
//
// fork(stream) seeds a child from (seed, stream) alone, so children do not
// depend on how much of the parent stream was consumed.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) noexcept : seed_(seed), state_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  float uniform_float() noexcept;
  double uniform_double() noexcept;
  double gaussian(double mu, double sigma) noexcept;
  // Uniform integer in [0, n); n must be > 0.
  std::uint64_t index(std::uint64_t n) noexcept;

  SeededRng fork(std::uint64_t stream) const noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

// The SplitMix64 finalizer on its own; used to derive seeds.
std::uint64_t mix_seed(std::uint64_t x) noexcept;

DenseTensor rng_uniform(SeededRng& rng, const Shape& shape);
DenseTensor rng_gaussian(SeededRng& rng, const Shape& shape, double mu, double sigma);
DenseTensor rng_bernoulli(SeededRng& rng, const Shape& shape, double p);

}  // namespace pseudolabel

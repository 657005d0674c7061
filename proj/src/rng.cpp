#include "pseudolabel/rng.hpp"

#include <cmath>
#include <numbers>

#include "pseudolabel/error.hpp"

namespace pseudolabel {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix_seed(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t SeededRng::next_u64() noexcept {
  state_ += kGolden;
  return mix_seed(state_);
}

float SeededRng::uniform_float() noexcept {
  return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
}

double SeededRng::uniform_double() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::gaussian(double mu, double sigma) noexcept {
  const double u1 = 1.0 - uniform_double();  // (0, 1]
  const double u2 = uniform_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mu + sigma * r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t SeededRng::index(std::uint64_t n) noexcept {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

SeededRng SeededRng::fork(std::uint64_t stream) const noexcept {
  return SeededRng(mix_seed(seed_ ^ mix_seed((stream + 1) * kGolden)));
}

DenseTensor rng_uniform(SeededRng& rng, const Shape& shape) {
  DenseTensor out(shape);
  for (auto& v : out.values()) v = rng.uniform_float();
  return out;
}

DenseTensor rng_gaussian(SeededRng& rng, const Shape& shape, double mu, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma) || !std::isfinite(mu)) {
    throw ParameterError("rng_gaussian: sigma must be finite and >= 0");
  }
  DenseTensor out(shape);
  for (auto& v : out.values()) v = static_cast<float>(rng.gaussian(mu, sigma));
  return out;
}

DenseTensor rng_bernoulli(SeededRng& rng, const Shape& shape, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("rng_bernoulli: p must lie in [0, 1]");
  DenseTensor out(shape);
  for (auto& v : out.values()) v = rng.uniform_double() < p ? 1.0f : 0.0f;
  return out;
}

}  // namespace pseudolabel

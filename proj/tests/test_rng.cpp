#include <doctest.h>

#include <cmath>
#include <cstdint>

#include "pseudolabel/error.hpp"
#include "pseudolabel/rng.hpp"

using namespace pseudolabel;

TEST_CASE("SplitMix64 reference outputs for seed 0") {
  SeededRng rng(0);
  CHECK(rng.next_u64() == 0xE220A8397B1DCDAFull);
  CHECK(rng.next_u64() == 0x6E789E6AA1B965F4ull);
  CHECK(rng.next_u64() == 0x06C45D188009454Full);
}

TEST_CASE("derived draws follow the documented bit recipes") {
  SeededRng a(11), b(11);
  const std::uint64_t x = b.next_u64();
  CHECK(a.uniform_float() == static_cast<float>(x >> 40) * 0x1.0p-24f);
  const std::uint64_t y = b.next_u64();
  CHECK(a.uniform_double() == static_cast<double>(y >> 11) * 0x1.0p-53);
  const std::uint64_t z = b.next_u64();
  CHECK(a.index(10) == static_cast<std::uint64_t>((static_cast<unsigned __int128>(z) * 10) >> 64));
}

TEST_CASE("uniform draws stay in [0, 1) and index stays in range") {
  SeededRng rng(5);
  for (int i = 0; i < 100000; ++i) {
    const float f = rng.uniform_float();
    const double d = rng.uniform_double();
    REQUIRE(f >= 0.0f);
    REQUIRE(f < 1.0f);
    REQUIRE(d >= 0.0);
    REQUIRE(d < 1.0);
    REQUIRE(rng.index(7) < 7);
  }
}

TEST_CASE("gaussian moments are close to the requested ones") {
  SeededRng rng(6);
  const int n = 200000;
  double s = 0.0, q = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.gaussian(2.0, 3.0);
    REQUIRE(std::isfinite(v));
    s += v;
    q += v * v;
  }
  const double mean = s / n, var = q / n - mean * mean;
  CHECK(std::abs(mean - 2.0) < 5 * 3.0 / std::sqrt(n));
  CHECK(std::abs(var - 9.0) < 0.15);
}

TEST_CASE("fork depends on seed and stream only") {
  SeededRng parent(42);
  const SeededRng early = parent.fork(3);
  for (int i = 0; i < 10; ++i) parent.next_u64();
  SeededRng late = parent.fork(3);
  SeededRng early_copy = early;
  CHECK(early_copy.next_u64() == late.next_u64());
  CHECK(parent.fork(3).seed() != parent.fork(4).seed());
  CHECK(SeededRng(42).fork(0).seed() != SeededRng(43).fork(0).seed());
}

TEST_CASE("tensor draws: bernoulli edges and determinism") {
  SeededRng r0(1);
  const DenseTensor zeros = rng_bernoulli(r0, {50, 20}, 0.0);
  for (float v : zeros.values()) CHECK(v == 0.0f);
  const DenseTensor ones = rng_bernoulli(r0, {50, 20}, 1.0);
  for (float v : ones.values()) CHECK(v == 1.0f);

  SeededRng a(42), b(42);
  CHECK(rng_uniform(a, {16, 16}) == rng_uniform(b, {16, 16}));
  CHECK(rng_gaussian(a, {16, 16}, 0.0, 1.0) == rng_gaussian(b, {16, 16}, 0.0, 1.0));
  CHECK(rng_bernoulli(a, {16, 16}, 0.3) == rng_bernoulli(b, {16, 16}, 0.3));
}

TEST_CASE("invalid distribution parameters are rejected") {
  SeededRng rng(0);
  CHECK_THROWS_AS(rng_bernoulli(rng, {2}, 1.5), ParameterError);
  CHECK_THROWS_AS(rng_bernoulli(rng, {2}, -0.1), ParameterError);
  CHECK_THROWS_AS(rng_gaussian(rng, {2}, 0.0, -1.0), ParameterError);
}

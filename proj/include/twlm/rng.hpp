// Seeded random source with hand-rolled distributions.
//
// std::mt19937_64 output is pinned by the standard, but the standard
// distributions are not; every distribution here is implemented by hand so
// that a seed reproduces the same stream on any platform or compiler.
#pragma once

#include <cstdint>
#include <random>

namespace twlm {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Derives an independent stream for a substage (e.g. per-epoch masking).
  static Rng fork(std::uint64_t seed, std::uint64_t stream) {
    return Rng(seed * 0x9e3779b97f4a7c15ull + stream + 1);
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0,1) with 53 bits of resolution.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).  Rejection keeps the result unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller with a cached spare draw.
  double normal();

  // Normal(0, sd^2) re-drawn until within trunc_sds standard deviations.
  double truncated_normal(double sd, double trunc_sds);

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace twlm

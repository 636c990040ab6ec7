#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace pflab {

// SplitMix64 finalizer; used for seeding and for deriving stream keys.
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t mix64(std::uint64_t x);

// xoshiro256** generator. This is the only source of randomness in the
// project; normal variates use Box-Muller on its uniforms so that a given
// seed produces the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Independent stream keyed by a seed and a path of integers, e.g.
  // Rng::stream(seed, {iteration, rollout}).
  static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  // Gamma(shape, 1) for shape >= 1 (Marsaglia-Tsang); used for Dirichlet draws.
  double gamma(double shape);

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Standard-normal vector drawn from a fresh stream keyed by `seed`.
std::vector<double> sample_prior(std::uint64_t seed, int dim);

}  // namespace pflab

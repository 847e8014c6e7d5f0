#pragma once

#include <cstdint>
#include <string_view>

#include "land/volume.hpp"

namespace land {

// Counter-based generator: draw k is a pure function of (seed, k), so the
// stream is identical on every platform and can be checkpointed as two
// integers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);
  // Box-Muller; consumes exactly two draws so the state stays (seed, counter).
  double normal();

  // Independent named sub-stream.
  Rng fork(std::string_view name) const;
  Rng fork(std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

// i.i.d. standard normal volume; advances rng.
Volume rng_normal(Rng& rng, const Shape& shape);

}  // namespace land

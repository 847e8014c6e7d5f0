#include "land/rng.hpp"

#include <cmath>
#include <numbers>

namespace land {

std::uint64_t mix64(std::uint64_t x) {
  // SplitMix64 finalizer.
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  // FNV-1a over the name, folded into the seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return mix64(seed ^ mix64(h));
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t k = counter_++;
  return mix64(mix64(seed_) ^ (k * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
}

double Rng::uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw ValidationError(concat("uniform_int: empty range [", lo, ", ", hi, "]"));
  const std::uint64_t span = std::uint64_t(std::int64_t(hi) - lo) + 1;
  return int(std::int64_t(lo) + std::int64_t(next_u64() % span));
}

double Rng::normal() {
  // u1 in (0, 1] keeps the log finite.
  const double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::string_view name) const { return Rng(derive_seed(seed_, name)); }

Rng Rng::fork(std::uint64_t index) const { return Rng(mix64(seed_ + mix64(index + 1))); }

Volume rng_normal(Rng& rng, const Shape& shape) {
  Volume v(shape);
  for (double& x : v.values()) x = rng.normal();
  return v;
}

}  // namespace land

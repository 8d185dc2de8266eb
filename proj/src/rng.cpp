#include "fiml/rng.hpp"

#include <cmath>
#include <numbers>

namespace fiml {

std::uint64_t CounterRng::derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t key = mix64(seed ^ 0x243f6a8885a308d3ULL);
  for (std::uint64_t p : path) key = mix64(key ^ mix64(p + 0x13198a2e03707344ULL));
  return key;
}

CounterRng CounterRng::stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  return CounterRng(derive_key(seed, path));
}

double CounterRng::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

double CounterRng::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t CounterRng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = max() - max() % n;
  for (;;) {
    const std::uint64_t x = (*this)();
    if (x < limit) return x % n;
  }
}

}  // namespace fiml

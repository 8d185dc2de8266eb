#pragma once

#include <cstdint>
#include <initializer_list>

namespace fiml {

// SplitMix64 finalizer; a strong 64-bit mixing bijection.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: output i is mix(key, i). Streams are addressed by
/// a key derived from (seed, purpose, index...), so draws do not depend on the
/// order in which streams are consumed.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

  static CounterRng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path);
  static std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() { return mix64(key_ ^ mix64(counter_++)); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller; consumes two draws per call.
  double normal();
  // Uniform integer in [0, n) by rejection (unbiased).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

// Named stream purposes, kept stable so seeds reproduce across versions.
namespace streams {
inline constexpr std::uint64_t kFamily = 0x66616d696c79ULL;
inline constexpr std::uint64_t kExample = 0x6578616d706cULL;
inline constexpr std::uint64_t kEpisode = 0x657069736f64ULL;
inline constexpr std::uint64_t kInit = 0x696e6974ULL;
inline constexpr std::uint64_t kTrain = 0x747261696eULL;
inline constexpr std::uint64_t kValidate = 0x76616c6964ULL;
inline constexpr std::uint64_t kEvaluate = 0x6576616cULL;
inline constexpr std::uint64_t kFinetune = 0x66696e65ULL;
inline constexpr std::uint64_t kCheck = 0x636865636bULL;
}  // namespace streams

}  // namespace fiml

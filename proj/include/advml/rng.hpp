#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace advml {

/// splitmix64 generator. Every random decision in the library draws from a
/// stream created by `Rng::stream(seed, tag, index)`, so a given
/// (seed, purpose, item) triple always sees the same numbers regardless of
/// call order or thread scheduling.
///
/// The distributions below are implemented here rather than taken from
/// <random>, whose distribution algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t state) noexcept : state_(state) {}

  /// Stream keyed by (seed, purpose tag, index). The initial state is
  /// mix(seed ^ mix(fnv1a64(tag) + index)).
  static Rng stream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) noexcept;

  std::uint64_t next_u64() noexcept;

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n) noexcept;

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Standard normal via Box-Muller (no cached second variate).
  double normal() noexcept;

  /// Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 uses the U^(1/shape) boost.
  double gamma(double shape) noexcept;

  /// Beta(a, b) as X / (X + Y) with X ~ Gamma(a), Y ~ Gamma(b).
  double beta(double a, double b) noexcept;

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
};

std::uint64_t fnv1a64(std::string_view text) noexcept;
std::uint64_t mix64(std::uint64_t z) noexcept;

/// Identity permutation 0..n-1 shuffled by `rng`.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace advml

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

namespace fk {

/// SplitMix64 step. Used for seeding and seed derivation.
std::uint64_t splitmix64(std::uint64_t& state);

/// Mixes a base seed with a label (FNV-1a of the label, then SplitMix64), so
/// independent streams can be keyed by row or view identifiers.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

/// xoshiro256** 1.0 (Blackman & Vigna), seeded by four SplitMix64 draws.
///
/// Every derived quantity (bounded integers, uniforms, normals, shuffles) uses
/// an algorithm fixed here rather than the implementation-defined <random>
/// distributions, so a seed produces the same stream on every platform.
class Xoshiro256 {
 public:
  explicit Xoshiro256(std::uint64_t seed);

  std::uint64_t next();

  /// Uniform integer in [0, bound). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t bound);

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform01();

  /// Standard normal via the Box-Muller transform. Draws come in pairs; the
  /// sine branch is cached and returned by the following call.
  double normal();

  /// Fisher-Yates, iterating from the back.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  std::optional<double> cached_normal_;
};

}  // namespace fk

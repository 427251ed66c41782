#pragma once

#include <cstdint>
#include <random>

namespace fvnce {

/// Seedable generator with explicit state. Child streams are derived by
/// hashing (seed, stream, key), so the draw sequence of a stream never
/// depends on how many other streams exist or which thread consumes them.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  [[nodiscard]] Rng split(std::uint64_t key) const;

  std::uint64_t next() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1), never returns 0.
  double uniform_open();
  /// Standard normal via Box-Muller (no cached second draw).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] std::uint64_t stream() const noexcept { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer.
[[nodiscard]] std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace fvnce

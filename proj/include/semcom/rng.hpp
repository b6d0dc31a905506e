#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace semcom {

// SplitMix64 finalizer; bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Derive an independent seed for a sub-stream, e.g. (master seed, cell index).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(mix64(seed) ^ mix64(stream + 0x632BE59BD9B4E019ull));
}

/// Counter-based generator: draw i of a stream is a pure function of (key, i), so
/// results never depend on call order or thread scheduling. The sequential
/// interface just walks the counter.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(derive_seed(seed, stream)) {}

  std::uint64_t bits_at(std::uint64_t i) const noexcept { return mix64(key_ ^ mix64(i)); }

  /// Uniform in the open interval (0, 1).
  double uniform_at(std::uint64_t i) const noexcept {
    return (static_cast<double>(bits_at(i) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on draws 2i and 2i+1.
  double normal_at(std::uint64_t i) const noexcept {
    const double u1 = uniform_at(2 * i);
    const double u2 = uniform_at(2 * i + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t next_bits() noexcept { return bits_at(counter_++); }
  double uniform() noexcept { return uniform_at(counter_++); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept { return normal_at(counter_++); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace semcom

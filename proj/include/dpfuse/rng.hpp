#pragma once

#include <cstdint>
#include <random>

namespace dpfuse {

/// Named stream families. A (master seed, tag, index) triple identifies an
/// independent substream, so per-record randomness does not depend on the
/// order in which records are processed.
enum class StreamTag : std::uint64_t {
  kAttributes = 1,
  kEdges = 2,
  kText = 3,
  kSkipGram = 4,
  kWalks = 5,
  kHetero = 6,
  kAlign = 7,
  kFuse = 8,
  kSplit = 9,
  kEval = 10,
  kSynth = 11,
  kEdgeCount = 12,
};

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

class Rng {
 public:
  using Engine = std::mt19937_64;
  using result_type = Engine::result_type;

  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  static Rng substream(std::uint64_t master, StreamTag tag,
                       std::uint64_t index = 0);

  static constexpr result_type min() { return Engine::min(); }
  static constexpr result_type max() { return Engine::max(); }
  result_type operator()() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform in (0, 1).
  double uniform_open() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();
  /// Laplace(0, scale).
  double laplace(double scale);
  /// Failures before the first success of a Bernoulli(p) sequence.
  /// Returns UINT64_MAX when p == 0.
  std::uint64_t geometric(double p);

  Engine& engine() { return engine_; }

 private:
  Engine engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace dpfuse

#include "dpfuse/rng.hpp"

#include <cmath>
#include <limits>

namespace dpfuse {

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng Rng::substream(std::uint64_t master, StreamTag tag, std::uint64_t index) {
  std::uint64_t h = mix64(master);
  h = mix64(h ^ static_cast<std::uint64_t>(tag));
  h = mix64(h ^ index);
  return Rng(h);
}

std::uint64_t Rng::index(std::uint64_t n) {
  std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
  return dist(engine_);
}

double Rng::normal() { return normal_(engine_); }

double Rng::laplace(double scale) {
  // Inverse CDF on u in (-1/2, 1/2).
  const double u = uniform_open() - 0.5;
  const double sign = u < 0 ? -1.0 : 1.0;
  return -scale * sign * std::log1p(-2.0 * std::abs(u));
}

std::uint64_t Rng::geometric(double p) {
  if (p >= 1.0) return 0;
  if (p <= 0.0) return std::numeric_limits<std::uint64_t>::max();
  const double skip = std::floor(std::log(uniform_open()) / std::log1p(-p));
  if (skip >= 1.8e19) return std::numeric_limits<std::uint64_t>::max();
  return static_cast<std::uint64_t>(skip);
}

}  // namespace dpfuse

#pragma once

#include <cstdint>
#include <random>

namespace ubp {

/// Derives an independent stream seed from a parent seed and a stream index.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream);

/// Stateless hash of (seed, a, b, c) to a standard normal deviate.
double hashed_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                     std::uint64_t c);

// Thin wrapper over mt19937_64. The distributions are written out here so
// that draws do not depend on the standard library's distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ubp

#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace lpalm {

/// Seeded random stream passed explicitly to every stochastic routine.
///
/// All variates are derived from the raw 64-bit engine output with
/// library-independent transforms, so a seed reproduces the same stream on
/// any standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform integer in [0, n).
  int uniform_int(int n);
  double normal();
  /// Knuth's multiplication method; meant for the small means used by the
  /// inventory demand model.
  int poisson(double lambda);
  /// Index drawn with probability proportional to `weights`.
  int categorical(std::span<const double> weights);

  /// Independent child stream. Advances this stream by one draw.
  Rng split();

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer, used to decorrelate derived seeds.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace lpalm

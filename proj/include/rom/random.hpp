#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace rom {

/// Seedable generator used for every random draw in the project.
///
/// The engine is std::mt19937_64. Uniform draws take the top 53 bits of one
/// engine output; normal draws use the Box-Muller transform on two uniforms
/// (the second variate is cached). Independent substreams are obtained with
/// `Rng::substream(seed, stream)`, which mixes the pair through SplitMix64,
/// so the same (seed, stream) always yields the same sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static std::uint64_t splitmix64(std::uint64_t x);
  static Rng substream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fisher-Yates on v, independent of the standard library's shuffle.
void shuffle(std::vector<std::size_t>& v, Rng& rng);

}  // namespace rom

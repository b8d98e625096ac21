#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace sltlab {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Folds one more component into a seed: mix(h, v) = splitmix64(h ^ splitmix64(v)).
constexpr std::uint64_t mix_seed(std::uint64_t h, std::uint64_t v) noexcept {
  return splitmix64(h ^ splitmix64(v));
}

enum class SeedPurpose : std::uint64_t {
  data = 1,
  mcmc = 2,
  xquad = 3,
  prior_volume = 4,
};

/// Seed ladder used by every experiment:
///   mix(mix(mix(mix(master, n), beta_index), replication), purpose)
constexpr std::uint64_t ladder_seed(std::uint64_t master, std::uint64_t n, std::uint64_t beta_index,
                                    std::uint64_t replication, SeedPurpose purpose) noexcept {
  std::uint64_t h = mix_seed(master, n);
  h = mix_seed(h, beta_index);
  h = mix_seed(h, replication);
  return mix_seed(h, static_cast<std::uint64_t>(purpose));
}

/// mt19937_64 stream with portable uniform and Gaussian transforms.
///
/// uniform(): top 53 bits of one engine output scaled by 2^-53, giving [0, 1).
/// normal(): Marsaglia polar method; the second variate of each accepted pair
/// is cached and returned by the next call.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double factor = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * factor;
    has_spare_ = true;
    return u * factor;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sltlab

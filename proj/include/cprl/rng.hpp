#pragma once

#include <cstdint>
#include <random>

namespace cprl {

// Seeded generator with explicit draw helpers. All randomness in the repo
// flows through instances of this type; there are no wall-clock seeds.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform in [0, 1) with 53-bit resolution, engine-stable across platforms.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    std::uint64_t bits() { return engine_(); }

    // Independent child stream; decorrelates the key from the parent state.
    Rng split(std::uint64_t key) {
        return Rng(engine_() ^ (key * 0x9e3779b97f4a7c15ull + 0xd1b54a32d192ed03ull));
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace cprl

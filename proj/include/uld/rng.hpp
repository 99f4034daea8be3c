#pragma once

#include <cstdint>
#include <string_view>

// splitmix64-based generator. The standard <random> distributions are not
// pinned across library implementations, and reproducibility of seeds is a
// contract here, so the few draws we need are spelled out.

namespace uld {

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive on both ends
    int uniform_int(int lo, int hi) {
        if (hi <= lo) return lo;
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal(double mean = 0.0, double stddev = 1.0);

    // Independent stream tied to (this seed, tag); used to give volumes,
    // samples and initializers their own reproducible substreams.
    Rng fork(std::string_view tag, std::uint64_t salt = 0) const;

  private:
    std::uint64_t state_;
};

}  // namespace uld

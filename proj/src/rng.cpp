#include "uld/rng.hpp"

#include <cmath>
#include <numbers>

namespace uld {

double Rng::normal(double mean, double stddev) {
    // Box-Muller; draws a fresh pair every call so state advances uniformly.
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::string_view tag, std::uint64_t salt) const {
    // FNV-1a over the tag, mixed with the current state and salt.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    Rng forked(state_ ^ h ^ (salt * 0x9e3779b97f4a7c15ULL));
    forked.next_u64();  // decorrelate from the parent
    return forked;
}

}  // namespace uld

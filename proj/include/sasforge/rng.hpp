#pragma once

#include <cmath>
#include <cstdint>

namespace sasforge {

// splitmix64: used both to derive stream seeds and as the finalizer of the
// counter-based hash below.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-based hash keyed by (seed, a, b, c). Stateless, so values depend
// only on the key, never on evaluation order; this is what keeps rendering
// bit-exact under any thread partitioning.
inline std::uint64_t hash_counter(std::uint64_t seed, std::uint64_t a,
                                  std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(seed ^ 0x6a09e667f3bcc909ULL);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

// Uniform double in [0, 1) from a 64-bit word (53 mantissa bits).
inline double u64_to_unit(std::uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double hash_uniform(std::uint64_t seed, std::uint64_t a,
                           std::uint64_t b = 0, std::uint64_t c = 0) {
    return u64_to_unit(hash_counter(seed, a, b, c));
}

// Standard normal via Box-Muller on two counter draws. The +0x1p-54 nudge
// keeps the log argument strictly positive.
inline double hash_gaussian(std::uint64_t seed, std::uint64_t a,
                            std::uint64_t b = 0, std::uint64_t c = 0) {
    const double u1 = hash_uniform(seed, a, b, 2 * c) + 0x1.0p-54;
    const double u2 = hash_uniform(seed, a, b, 2 * c + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

// Small sequential generator (pcg32) for places that want a stream rather
// than a counter: dataset shuffles, weight init, latent sampling.
class Pcg32 {
public:
    explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0) {
        state_ = 0;
        inc_ = (splitmix64(stream ^ 0xda3e39cb94b95bdbULL) << 1) | 1u;
        next_u32();
        state_ += splitmix64(seed);
        next_u32();
    }

    std::uint32_t next_u32() {
        const std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        const std::uint32_t xorshifted =
            static_cast<std::uint32_t>(((old >> 18) ^ old) >> 27);
        const std::uint32_t rot = static_cast<std::uint32_t>(old >> 59);
        return (xorshifted >> rot) | (xorshifted << ((32 - rot) & 31));
    }

    std::uint64_t next_u64() {
        const std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Uniform in [0, 1).
    double uniform() { return u64_to_unit(next_u64()); }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Standard normal (Box-Muller, both draws consumed every call).
    double gaussian() {
        const double u1 = uniform() + 0x1.0p-54;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(6.283185307179586477 * u2);
    }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 1;
};

}  // namespace sasforge

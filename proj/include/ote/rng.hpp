#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ote {

// All randomness flows from one root seed through named sub-streams, so that
// e.g. changing the negative-sampling schedule does not perturb initialization.
// Draws are hand-rolled on top of splitmix64/xoshiro-style mixing instead of
// std::uniform_*_distribution, which is implementation-defined and would break
// frozen test values across libstdc++ versions.

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Seed for sub-stream `name` with up to two salts (step, sample index, ...).
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view name,
                                 std::uint64_t salt0 = 0, std::uint64_t salt1 = 0) {
    std::uint64_t s = root ^ fnv1a64(name);
    splitmix64(s);
    s ^= 0x9e3779b97f4a7c15ULL + salt0;
    splitmix64(s);
    s ^= 0xc2b2ae3d27d4eb4fULL + salt1;
    splitmix64(s);
    return s;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        // xoshiro256**
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double next_real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t next_index(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_real(); }

    // Standard normal via Box-Muller; two uniforms per draw, no cached state.
    double next_normal() {
        double u1 = next_real();
        double u2 = next_real();
        while (u1 <= 0.0) u1 = next_real();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238 * u2);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
};

} // namespace ote

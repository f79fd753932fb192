#pragma once

#include <cstdint>
#include <initializer_list>

namespace acmc::rng {

// splitmix64 step; also used as the mixing function for stream derivation.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Counter-based stream: state advances by splitmix64. Streams derived from the
// same (seed, path) are identical regardless of thread scheduling, which is
// what makes parallel and serial runs byte-identical.
struct Stream {
    std::uint64_t state = 0;

    std::uint64_t next_u64() {
        state += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform on the open interval (0, 1).
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }
};

inline Stream make_stream(std::uint64_t seed) {
    return Stream{mix64(seed)};
}

// Derive a child stream from (seed, path components). Deterministic and
// order-sensitive in the path.
inline Stream derive_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = mix64(seed);
    for (std::uint64_t k : path) {
        h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
    }
    return Stream{h};
}

}  // namespace acmc::rng

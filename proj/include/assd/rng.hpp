#pragma once

#include <cstdint>
#include <random>

namespace assd {

// splitmix64 mixing step; used to derive independent sub-stream seeds.
inline std::uint64_t mixSeed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives the seed of a purpose-specific stream from a root seed. The tags
// keep per-purpose streams (init, shuffle, augmentation, data synthesis)
// independent of each other and of call order, which is what makes training
// bitwise reproducible.
inline std::uint64_t deriveSeed(std::uint64_t root, std::uint64_t tag,
                                std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t s = mixSeed(root);
    s = mixSeed(s ^ tag);
    s = mixSeed(s ^ a);
    s = mixSeed(s ^ b);
    return s;
}

namespace stream {
inline constexpr std::uint64_t kInit = 0x11;
inline constexpr std::uint64_t kShuffle = 0x22;
inline constexpr std::uint64_t kAugment = 0x33;
inline constexpr std::uint64_t kSynth = 0x44;
} // namespace stream

// mt19937_64 with explicit uniform helpers. The draw functions avoid
// std::*_distribution, whose output is implementation-defined; the mapping
// below is pinned so a given seed always produces the same sequence.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t nextU64() { return engine_(); }

    // uniform in [0,1) with 53-bit resolution
    double uniform() { return static_cast<double>(nextU64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi] inclusive
    int uniformInt(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(nextU64() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
};

} // namespace assd

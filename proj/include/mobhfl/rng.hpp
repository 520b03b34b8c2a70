#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace mobhfl {

// Counter-based pseudo-random streams. Every draw is a pure function of
// (key, counter), so per-vehicle streams can be consumed from any worker
// thread with results independent of scheduling. The generator is the
// splitmix64 finalizer over an additive counter sequence.
namespace rng {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

inline std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Derive a stream key from a seed and up to two stream identifiers.
inline std::uint64_t key(std::uint64_t seed, std::uint64_t id1 = 0, std::uint64_t id2 = 0) {
    std::uint64_t k = mix(seed + kGamma);
    k = mix(k ^ (id1 + kGamma));
    k = mix(k ^ (id2 + kGamma));
    return k;
}

} // namespace rng

/// One independent random stream. Cheap to construct; copyable.
class StreamRng {
public:
    StreamRng() = default;
    explicit StreamRng(std::uint64_t key) : key_(key) {}
    StreamRng(std::uint64_t seed, std::uint64_t id1, std::uint64_t id2 = 0)
        : key_(rng::key(seed, id1, id2)) {}

    std::uint64_t next_u64() { return rng::mix(key_ + (++counter_) * rng::kGamma); }

    /// Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t next_below(std::uint64_t n) {
        // Lemire multiply-shift with rejection; exact and branch-light.
        std::uint64_t x = next_u64();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            std::uint64_t t = (0 - n) % n;
            while (lo < t) {
                x = next_u64();
                m = static_cast<__uint128_t>(x) * n;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Uniform in [lo, hi).
    double next_in(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Standard normal via Box-Muller (implementation-pinned for reproducibility).
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Fisher-Yates shuffle, deterministic for a given stream state.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace mobhfl

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace cpnet {

// Counter-based splitmix64 generator. One u64 of state, trivially
// serializable, identical output on every platform. All randomness in the
// project flows from a single master seed through named sub-streams
// (substream(seed, "noise", epoch, cloud) etc.), so any component can be
// replayed in isolation.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller. Draws two uniforms per sample and keeps
    // no cached spare, so the state stays a single u64.
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

private:
    std::uint64_t state_;
};

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    return h;
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const char c : s) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 1099511628211ULL;
    }
    return h;
}

// Derives the seed of a named sub-stream.
inline std::uint64_t substream(std::uint64_t seed, std::string_view name) {
    return hash_combine(seed, fnv1a(name));
}

inline std::uint64_t substream(std::uint64_t seed, std::string_view name, std::uint64_t a) {
    return hash_combine(substream(seed, name), a);
}

inline std::uint64_t substream(std::uint64_t seed, std::string_view name, std::uint64_t a,
                               std::uint64_t b) {
    return hash_combine(substream(seed, name, a), b);
}

}  // namespace cpnet

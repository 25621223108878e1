#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace covnet {

/// Reproducible random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard, so streams agree across platforms and standard libraries.
/// Uniform variates use the top 53 bits of each draw; Gaussian variates come
/// from Box-Muller, consuming two uniforms and returning the cosine branch
/// first and the cached sine branch on the next call.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream derived from (seed, a, b) via splitmix64 mixing.
    static Rng derived(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        std::uint64_t s = mix(seed ^ mix(a + 0x9e3779b97f4a7c15ULL) ^ mix(mix(b) + 1));
        return Rng(s);
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1]; safe under log().
    double uniform_open0() { return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open0();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // rejection keeps the result unbiased and platform independent
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace covnet

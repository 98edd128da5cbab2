#pragma once

// Counter-based deterministic RNG. Output depends only on (key, counter), so a
// given seed reproduces the same stream on every platform, and per-index derived
// streams make results independent of how work is split across workers.

#include <cmath>
#include <cstdint>

#include "lab/smallvec.hpp"

namespace lab {

namespace detail {
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}
}  // namespace detail

struct Rng {
    std::uint64_t key = 0;
    std::uint64_t ctr = 0;

    explicit Rng(std::uint64_t seed = 0) : key(detail::mix64(seed ^ 0xA5A5A5A55A5A5A5AULL)) {}

    // independent substream for index i (particle, probe, grid cell, ...)
    Rng derive(std::uint64_t i) const {
        Rng r;
        r.key = detail::mix64(key ^ detail::mix64(i * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL));
        r.ctr = 0;
        return r;
    }

    std::uint64_t next_u64() {
        const std::uint64_t x = key + (++ctr) * 0x9E3779B97F4A7C15ULL;
        return detail::mix64(x);
    }

    // uniform on the open interval (0,1); never returns an exact 0 or 1
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // Box-Muller; two uniforms per normal, no caching (keeps the stream shape simple)
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    Vec normal_vec(std::size_t d) {
        Vec z(d);
        for (std::size_t i = 0; i < d; ++i) z[i] = normal();
        return z;
    }

    // index into a discrete distribution given by (unnormalized is fine) weights
    std::size_t categorical(const double* w, std::size_t n) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += w[i];
        double u = uniform() * total;
        for (std::size_t i = 0; i < n; ++i) {
            u -= w[i];
            if (u <= 0.0) return i;
        }
        return n - 1;
    }
};

}  // namespace lab

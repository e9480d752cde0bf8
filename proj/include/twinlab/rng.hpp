#pragma once
#include <cmath>
#include <cstdint>
#include <initializer_list>

/* Self-contained RNG stack. std:: distributions are implementation-defined,
 * so everything random is hand-rolled here to keep outputs byte-identical
 * across compilers and platforms. */

namespace twinlab::rng {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/* FNV-1a over a string literal; used to tag derived seed streams by role. */
constexpr uint64_t tag(const char* s) {
    uint64_t h = 1469598103934665603ull;
    for (; *s; ++s) h = (h ^ uint64_t(*s)) * 1099511628211ull;
    return h;
}

/* Deterministic sub-seed from (master, structural words). Words are folded
 * into a splitmix chain one at a time, so (seed, {a}) != (seed, {a, 0}). */
inline uint64_t derive(uint64_t master, std::initializer_list<uint64_t> words) {
    uint64_t s = master;
    uint64_t h = splitmix64(s);
    for (uint64_t w : words) {
        s ^= w + 0x9e3779b97f4a7c15ull + (s << 6) + (s >> 2);
        h = splitmix64(s);
    }
    return h;
}

/* xoshiro256** */
struct Stream {
    uint64_t s[4];

    static Stream seeded(uint64_t seed) {
        Stream r;
        for (auto& w : r.s) w = splitmix64(seed);
        return r;
    }

    uint64_t next() {
        auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        const uint64_t result = rotl(s[1] * 5, 7) * 9;
        const uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        return result;
    }

    /* open interval (0,1): never 0 (log-safe), never 1 */
    double uniform01() { return double(next() >> 11) * 0x1.0p-53 + 0x1.0p-54; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /* integer in [0, n) by rejection-free 128-bit multiply (tiny bias is
     * irrelevant at lab scale but kept well below 2^-64 anyway) */
    uint64_t below(uint64_t n) {
        return uint64_t((__uint128_t(next()) * n) >> 64);
    }
};

/* Box-Muller, cosine branch only: always consumes exactly two uniforms and
 * keeps no cached spare, so the stream position is a pure function of the
 * number of calls. */
inline double normal(Stream& g) {
    const double u1 = g.uniform01();
    const double u2 = g.uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.28318530717958647692528676655900577 * u2);
}

/* Poisson: Knuth's product method below 10, Hormann's PTRS transformed
 * rejection above. Both consume a data-dependent number of uniforms, which is
 * fine because every logical draw site owns a derived stream. */
inline long poisson(Stream& g, double mean) {
    if (!(mean >= 0.0)) return -1; // caller guards; keep noexcept-ish
    if (mean == 0.0) return 0;
    if (mean < 10.0) {
        const double limit = std::exp(-mean);
        double prod = 1.0;
        long k = -1;
        do {
            prod *= g.uniform01();
            ++k;
        } while (prod > limit);
        return k;
    }
    const double b = 0.931 + 2.53 * std::sqrt(mean);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    const double log_mean = std::log(mean);
    for (;;) {
        const double u = g.uniform01() - 0.5;
        const double v = g.uniform01();
        const double us = 0.5 - std::fabs(u);
        const double kf = std::floor((2.0 * a / us + b) * u + mean + 0.43);
        if (us >= 0.07 && v <= v_r) return long(kf);
        if (kf < 0.0 || (us < 0.013 && v > us)) continue;
        if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
            kf * log_mean - mean - std::lgamma(kf + 1.0))
            return long(kf);
    }
}

} // namespace twinlab::rng

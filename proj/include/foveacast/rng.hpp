#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace foveacast {

// SplitMix64 step: cheap, well-mixed stream used to derive independent child
// seeds from one corpus seed.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Child seed for a named/numbered subsystem; mixing the FNV-1a hash of the
// tag keeps sibling streams uncorrelated.
inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index = 0) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    uint64_t s = base ^ h;
    splitmix64(s);
    s ^= index * 0x9e3779b97f4a7c15ULL;
    return splitmix64(s);
}

// The explicit draw helpers below replace std::*_distribution, whose exact
// output sequences are implementation-defined; these are bit-stable anywhere.

// Uniform in [0,1) with 53 random bits.
inline double uniform_double(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_double(rng);
}

// Standard normal via Box-Muller (fresh pair each call; the spare is dropped
// so draws never depend on call-site pairing).
inline double gaussian(std::mt19937_64& rng) {
    double u1 = uniform_double(rng);
    while (u1 <= 0.0) u1 = uniform_double(rng);
    const double u2 = uniform_double(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

// Exponential inter-arrival time for a Poisson process of the given rate.
inline double exponential(std::mt19937_64& rng, double rate) {
    double u = uniform_double(rng);
    while (u <= 0.0) u = uniform_double(rng);
    return -std::log(u) / rate;
}

inline bool bernoulli(std::mt19937_64& rng, double p) { return uniform_double(rng) < p; }

}  // namespace foveacast

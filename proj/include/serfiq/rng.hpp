#pragma once

// Seeded random number utilities. Everything that draws randomness in this
// library derives its stream from explicit 64-bit seeds through the mixing
// functions below, so results are reproducible across runs, platforms and
// execution schedules.

#include <cstdint>
#include <cmath>
#include <string_view>
#include <vector>

namespace serfiq {

// SplitMix64 finalizer (Steele, Lea, Flood 2014). Bijective on uint64.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Keyed derivation: fold a tag into a seed. Chain calls to derive
// sub-seeds from (seed, tag0, tag1, ...) without shared state.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    return splitmix64(seed ^ splitmix64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag0,
                                 std::uint64_t tag1) {
    return derive_seed(derive_seed(seed, tag0), tag1);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag0,
                                 std::uint64_t tag1, std::uint64_t tag2) {
    return derive_seed(derive_seed(seed, tag0, tag1), tag2);
}

// FNV-1a over bytes; used to derive per-record seeds from string ids.
inline std::uint64_t hash_string(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Stateless keep/drop decision for a dropout mask unit. Returns true when
// the unit is kept. Used identically in forward and backward passes.
inline bool mask_keep(std::uint64_t plan_seed, std::uint64_t layer,
                      std::uint64_t unit, double keep_prob) {
    const std::uint64_t h = derive_seed(plan_seed, layer, unit);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;  // [0,1)
    return u < keep_prob;
}

// Counter-free sequential generator over the splitmix64 orbit.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    // Uniform on [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on the open interval (-1,1); cannot return the endpoints.
    double uniform_signed_open() {
        const double u = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
        return 2.0 * u - 1.0;
    }

    double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; one value per call, no cached pair so
    // the stream position stays a simple function of the call count.
    double gaussian() {
        const double u1 = 1.0 - uniform();  // (0,1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Unbiased integer in [0,n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace serfiq

#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace capsrec {

// Deterministic random source. All randomness in the library flows through
// this wrapper so results are bit-reproducible across platforms: the standard
// distribution objects are implementation-defined, so sampling is done by
// hand on top of mt19937_64.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t raw() { return eng_(); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Unbiased integer in [0, n) via rejection sampling.
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = (UINT64_MAX / n) * n;
        uint64_t r = eng_();
        while (r >= limit) r = eng_();
        return r % n;
    }

    // In-place Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 eng_;
};

// Stable seed derivation for independent random streams (split, init,
// shuffling, dropout, ...). splitmix64 finalizer over seed XOR salt.
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed ^ (salt * 0x9E3779B97F4A7C15ULL);
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace seed_salt {
constexpr uint64_t split = 1;
constexpr uint64_t xavier = 2;
constexpr uint64_t shuffle = 3;
constexpr uint64_t dropout = 4;
constexpr uint64_t routing_init = 5;
constexpr uint64_t kmeans = 6;
constexpr uint64_t generator = 7;
}  // namespace seed_salt

}  // namespace capsrec

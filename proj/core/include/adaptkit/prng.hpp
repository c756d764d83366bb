#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

// Deterministic random number generation. Every randomized step in this
// project (shuffles, resamples, weight init, dropout) runs on the generators
// below, so any output is reproducible from its integer seed alone, on any
// platform, and can be re-derived in another language from this description:
//
//   splitmix64:   state += 0x9E3779B97F4A7C15; z = state;
//                 z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//                 z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//                 return z ^ (z >> 31);
//
//   xoshiro256**: state s[0..3] taken from four successive splitmix64 draws;
//                 next() as in Blackman & Vigna's reference implementation.
//
//   doubles:      next_double() = (next() >> 11) * 2^-53, uniform in [0, 1).
//   indices:      next_below(n) = next() % n. The modulo bias at our n is
//                 irrelevant next to the reproducibility requirement.
//   shuffling:    Fisher-Yates, descending i, j = next_below(i + 1).

namespace adaptkit {

class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    uint64_t state_;
};

class Xoshiro256 {
public:
    explicit Xoshiro256(uint64_t seed) {
        SplitMix64 sm(seed);
        for (auto& s : state_) s = sm.next();
    }

    uint64_t next() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53 significant bits.
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in [0, n). n must be positive.
    uint64_t next_below(uint64_t n) { return next() % n; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4];
};

template <typename T>
void fisher_yates(std::vector<T>& items, Xoshiro256& gen) {
    for (size_t i = items.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(gen.next_below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace adaptkit

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

#include "descore/errors.hpp"

namespace descore {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministically folds a master seed and a list of tags into one stream seed.
// Every stochastic decision in the project draws from a stream derived this way,
// so runs are reproducible and resumable from (seed, step) alone.
inline uint64_t mix_seed(uint64_t master, std::initializer_list<uint64_t> tags) {
    uint64_t s = master ^ 0xD15C04E1ABULL;
    uint64_t acc = splitmix64(s);
    for (uint64_t t : tags) {
        s ^= t + 0x9e3779b97f4a7c15ULL + (acc << 6) + (acc >> 2);
        acc ^= splitmix64(s);
    }
    return acc;
}

// Stream tags; keep masking on its own stream so a p=1 run consumes no draws
// shared with any other mechanism.
enum StreamTag : uint64_t {
    kTagInit = 1,
    kTagShuffle = 2,
    kTagMask = 3,
    kTagRollout = 4,
    kTagDataGen = 5,
    kTagCot = 6,
    kTagEval = 7,
    kTagTheory = 8,
    kTagPairPick = 9,
};

// mt19937_64 wrapper with self-contained distributions; the std:: distribution
// objects are implementation-defined and would not reproduce across libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    static Rng derive(uint64_t master, std::initializer_list<uint64_t> tags) {
        return Rng(mix_seed(master, tags));
    }

    uint64_t bits() { return gen_(); }

    double uniform01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double normal(double mu = 0.0, double sigma = 1.0) {
        // Box-Muller, cosine branch only; two draws per value, no cached spare.
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mu + sigma * r * std::cos(6.283185307179586476925286766559 * u2);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Inclusive range, rejection sampled.
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw NumericError("uniform_int: empty range");
        const uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return lo + static_cast<int>(x % span);
    }

    // Index draw from an (unnormalized valid) probability vector via CDF scan.
    int categorical(std::span<const double> probs) {
        const double u = uniform01();
        double cum = 0.0;
        for (size_t i = 0; i < probs.size(); ++i) {
            cum += probs[i];
            if (u < cum) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace descore

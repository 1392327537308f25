#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "planaudio/common.hpp"

namespace planaudio {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// All randomness flows from one root seed. Subsystem streams are derived as
//   derive_seed(root, label, index) = splitmix64(root ^ splitmix64(fnv1a64(label) + index))
// so e.g. the training stream for epoch 7 is derive_seed(root, "train", 7).
// The derivation is part of the on-disk reproducibility contract (see README).
inline uint64_t derive_seed(uint64_t root, std::string_view label, uint64_t index = 0) {
    return splitmix64(root ^ splitmix64(fnv1a64(label) + index));
}

// mt19937_64 engine with hand-rolled distributions. The standard library's
// distribution objects are implementation-defined, so sampling goes through
// these fixed mappings to keep byte-identical runs across stdlibs.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Rejection sampling, exact.
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) throw ContractError("uniform_int: n must be positive");
        const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % n;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Inclusive range [lo, hi].
    int64_t uniform_range(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(uniform_int(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Box-Muller, standard normal.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Index drawn from unnormalized nonnegative weights. Zero-weight entries
    // are never returned.
    size_t categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) {
            if (w < 0.0) throw ContractError("categorical: negative weight");
            total += w;
        }
        if (total <= 0.0) throw ContractError("categorical: all weights zero");
        double x = uniform() * total;
        for (size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] <= 0.0) continue;
            if (x < weights[i]) return i;
            x -= weights[i];
        }
        for (size_t i = weights.size(); i-- > 0;) {
            if (weights[i] > 0.0) return i;
        }
        throw ContractError("categorical: unreachable");
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace planaudio

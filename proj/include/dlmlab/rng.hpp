#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dlmlab/common.hpp"

namespace dlmlab {

// xoshiro256** seeded through SplitMix64. All sampling helpers below are
// written against the raw bit stream (no std::random distributions), so the
// same seed yields the same draws on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& w : s_) {
            x += 0x9e3779b97f4a7c15ull;
            w = splitmix64(x - 0x9e3779b97f4a7c15ull);
        }
        have_spare_ = false;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl_(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl_(s_[3], 45);
        return result;
    }

    // Uniform double in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n) by bitmask rejection (unbiased, portable).
    uint64_t randint(uint64_t n) {
        require(n > 0, "randint: n must be positive");
        if (n == 1) return 0;
        uint64_t mask = ~0ull >> __builtin_clzll(n - 1);
        uint64_t v;
        do {
            v = next_u64() & mask;
        } while (v >= n);
        return v;
    }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform01();  // (0, 1]
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(randint(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct values from [0, n), in ascending order.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
        require(k <= n, "sample_without_replacement: k=", k, " > n=", n);
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        // partial Fisher-Yates: first k entries are the sample
        for (size_t i = 0; i < k; ++i) {
            size_t j = i + static_cast<size_t>(randint(n - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
        return idx;
    }

private:
    static uint64_t rotl_(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4]{};
    double spare_{0.0};
    bool have_spare_{false};
};

}  // namespace dlmlab

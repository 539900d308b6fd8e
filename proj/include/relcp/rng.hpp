#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace relcp {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from a master seed and a salt. Used to
// give every step / purpose its own reproducible stream.
inline uint64_t derive_seed(uint64_t master, uint64_t salt) {
    return splitmix64(master ^ splitmix64(salt));
}

// Deterministic RNG. std::mt19937_64 output is fully specified by the
// standard; the bounded/uniform draws below avoid std::*_distribution,
// whose algorithms are implementation-defined.
class Rng {
   public:
    Rng() : engine_(0) {}
    explicit Rng(uint64_t seed) : engine_(splitmix64(seed)) {}

    uint64_t next_u64() { return engine_(); }

    // Unbiased draw in [0, n) by rejection.
    uint64_t bounded(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = engine_();
            if (r >= threshold) return r % n;
        }
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (deterministic, no cached spare).
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    // k distinct values from [0, n), in draw order (partial Fisher-Yates).
    std::vector<int> sample_without_replacement(int n, int k) {
        if (k > n) k = n;
        std::vector<int> pool(n);
        for (int i = 0; i < n; ++i) pool[i] = i;
        std::vector<int> out;
        out.reserve(k);
        for (int i = 0; i < k; ++i) {
            const int j = i + static_cast<int>(bounded(static_cast<uint64_t>(n - i)));
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = bounded(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Textual engine state; std::mt19937_64 round-trips exactly.
    std::string state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void restore(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

   private:
    std::mt19937_64 engine_;
};

}  // namespace relcp

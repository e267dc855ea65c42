#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace co2rl {

// Mixes a stream label into a master seed so that independent consumers
// (per-trajectory, per-layer-init, per-agent) get decorrelated engines.
// splitmix64 finalizer; same inputs give the same stream on every platform.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Seeded random stream with hand-rolled distributions. std::mt19937_64 output
// is pinned by the standard; the distributions below avoid the
// implementation-defined std::*_distribution so sequences are bit-identical
// across compilers.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}
    RngStream(std::uint64_t master, std::uint64_t stream) : engine_(derive_seed(master, stream)) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // standard normal via Box-Muller; caches the second deviate
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    std::uint32_t uniform_index(std::uint32_t n) {
        // unbiased via rejection on the top 32 bits
        const std::uint64_t limit = (0x100000000ULL / n) * n;
        std::uint64_t x = 0;
        do {
            x = engine_() >> 32;
        } while (x >= limit);
        return static_cast<std::uint32_t>(x % n);
    }

    template <class It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint32_t>(last - first);
        for (std::uint32_t i = n; i > 1; --i) {
            const std::uint32_t j = uniform_index(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace co2rl

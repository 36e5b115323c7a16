#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace pgnn::rng {

// splitmix64 step; used to derive independent child seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Deterministic per-stream seed derivation. Every module that consumes
// randomness gets child_seed(master, <stream id>) so partial pipelines
// stay reproducible no matter which stages run.
inline std::uint64_t child_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t s = master ^ (0xA0761D6478BD642FULL * (stream + 1));
    splitmix64(s);
    return splitmix64(s);
}

// A seeded random stream with hand-rolled distributions. mt19937_64 output
// is pinned by the standard and the distributions below are written out
// explicitly, so sequences are reproducible across platforms.
class Stream {
public:
    explicit Stream(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    double log_uniform(double lo, double hi) {
        if (lo <= 0.0 || hi <= lo) throw std::invalid_argument("log_uniform: need 0 < lo < hi");
        return std::exp(uniform(std::log(lo), std::log(hi)));
    }

    // inclusive bounds, rejection-sampled to avoid modulo bias
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
        const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
        const std::uint64_t limit = std::uint64_t(-1) - (std::uint64_t(-1) % span);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return lo + static_cast<int>(x % span);
    }

    // standard normal via Box-Muller, caching the spare draw
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace pgnn::rng

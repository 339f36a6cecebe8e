#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace sketchtrack {

// SplitMix64 finalizer; avalanches all input bits. Used to derive child
// stream ids so that split-off streams do not collide with sequential ones.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Seeded random stream handle. Identical (seed, stream) pairs reproduce
// identical draw sequences; distinct stream ids give independent streams.
//
// The engine is mt19937_64 (sequence fully specified by the standard) and all
// distribution transforms are implemented here rather than with <random>
// distributions, whose output is implementation-defined and would break the
// bit-reproducibility contract.
class RngHandle {
public:
    explicit RngHandle(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffULL),
                          static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream & 0xffffffffULL),
                          static_cast<std::uint32_t>(stream >> 32)};
        engine_ = std::mt19937_64(seq);
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    // Fresh handle over the same seed with a stream id derived from this
    // handle's stream and the child index. Deterministic; does not disturb
    // this handle's sequence.
    RngHandle split(std::uint64_t child) const {
        return RngHandle(seed_, mix64(stream_ * 0x9e3779b97f4a7c15ULL ^ (child + 1)));
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform on (0, 1]; never returns zero, safe under log().
    double uniform_pos() { return 1.0 - uniform01(); }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    // Standard normal via Box-Muller; the pair's second value is cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform_pos();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(t);
        have_cached_ = true;
        return r * std::cos(t);
    }

    // Uniform integer in [0, n); unbiased via rejection.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
        std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Uniform integer in [lo, hi] inclusive.
    long long uniform_int(long long lo, long long hi) {
        if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
        return lo + static_cast<long long>(uniform_index(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    // Distinct indices from {0, ..., m-1}, size p, uniform over subsets;
    // partial Fisher-Yates, order is the sampled order.
    std::vector<std::size_t> sample_without_replacement(std::size_t m, std::size_t p) {
        if (p > m) throw std::invalid_argument("sample_without_replacement: p > m");
        std::vector<std::size_t> pool(m);
        for (std::size_t i = 0; i < m; ++i) pool[i] = i;
        for (std::size_t i = 0; i < p; ++i) {
            std::size_t j = i + static_cast<std::size_t>(uniform_index(m - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(p);
        return pool;
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace sketchtrack

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace prefopt {

// Counter-based deterministic generator (splitmix64 output function over an
// incrementing counter). Identical seed + identical call sequence gives
// identical outputs; independent streams are derived by seed ^ stream_index.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

    std::uint64_t next_u64() {
        std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // [0, 1) with 53-bit resolution.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // Unbiased integer in [0, n), n > 0.
    std::uint64_t uniform_below(std::uint64_t n) {
        const std::uint64_t reject_below = (-n) % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x < reject_below);
        return x % n;
    }

    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(uniform_below(static_cast<std::uint64_t>(n)));
    }

    Rng split(std::uint64_t stream_index) const {
        return Rng(seed_ ^ stream_index);
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

// Fisher-Yates shuffle driven by the deterministic generator.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t k = 0; k + 1 < v.size(); ++k) {
        const std::size_t j = k + rng.uniform_index(v.size() - k);
        std::swap(v[k], v[j]);
    }
}

} // namespace prefopt

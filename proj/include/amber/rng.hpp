#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace amber {

/// SplitMix64 stream. Every derived draw below is defined in terms of
/// next_u64() so that other implementations can reproduce sampling exactly:
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
///
///   uniform()      = (next_u64() >> 11) * 2^-53            in [0, 1)
///   below(n)       = high 64 bits of next_u64() * n        in [0, n)
///   coin()         = next_u64() >> 63
///   normal()       = Box-Muller, u1 = 1 - uniform(), u2 = uniform(),
///                    sqrt(-2 ln u1) * cos(2 pi u2)
///   shuffle(v)     = Fisher-Yates from the back: for i = n-1..1, swap(v[i], v[below(i+1)])
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n) {
        const unsigned __int128 prod = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::uint64_t>(prod >> 64);
    }

    bool coin() { return (next_u64() >> 63) != 0; }

    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename V>
    void shuffle(std::vector<V>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t state() const { return state_; }

   private:
    std::uint64_t state_;
};

}  // namespace amber

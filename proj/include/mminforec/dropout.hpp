#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mminforec {

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline double to_unit(uint64_t x) {
    // 53-bit mantissa -> [0, 1)
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

}  // namespace detail

// Derive an independent stream seed; used to give every dropout site its own mask.
inline uint64_t derive_seed(uint64_t base, uint64_t tag) {
    return detail::splitmix64(base ^ detail::splitmix64(tag));
}

// Deterministic dropout mask: the keep pattern is a pure function of
// (seed, rate, element index). Kept entries scale by 1/(1-rate), dropped
// entries are exactly 0. rate 0 is the identity.
struct DropoutMask {
    uint64_t seed = 0;
    double rate = 0.0;

    DropoutMask() = default;
    DropoutMask(uint64_t s, double r) : seed(s), rate(r) {
        if (!(r >= 0.0 && r < 1.0)) throw std::invalid_argument("DropoutMask: rate must be in [0,1)");
    }

    bool identity() const { return rate == 0.0; }

    double value_at(int64_t i) const {
        if (rate == 0.0) return 1.0;
        double u = detail::to_unit(detail::splitmix64(seed ^ (static_cast<uint64_t>(i) * 0xD1B54A32D192ED03ull)));
        return u < rate ? 0.0 : 1.0 / (1.0 - rate);
    }

    std::vector<double> pattern(int64_t n) const {
        std::vector<double> p(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = value_at(i);
        return p;
    }
};

}  // namespace mminforec

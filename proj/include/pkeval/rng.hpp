#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "pkeval/digest.hpp"

namespace pkeval {

/// Deterministic RNG used everywhere randomness is part of a contract.
///
/// std::mt19937_64's raw output sequence is fully specified by the standard,
/// and all derived draws below are implemented by hand, so identical seeds
/// reproduce identical streams on every platform. Distribution classes from
/// <random> are implementation-defined and must not be used here.
class DetRng {
public:
    explicit DetRng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform integer in [0, bound) via rejection sampling; bound must be > 0.
    uint64_t bounded(uint64_t bound) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % bound;
    }

    /// Uniform real in [0, 1) with 53 bits of precision.
    double uniform_real() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform real in [lo, hi).
    double uniform_real(double lo, double hi) {
        return lo + (hi - lo) * uniform_real();
    }

    /// Uniform index into a non-empty container.
    template <typename Container>
    size_t pick_index(const Container& c) {
        return static_cast<size_t>(bounded(static_cast<uint64_t>(c.size())));
    }

    /// Fisher-Yates shuffle with hand-rolled draws.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(bounded(static_cast<uint64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

/// Derives an independent child seed from a base seed and a string key.
/// Used for per-question RNG streams so adding or removing one question
/// never perturbs the draws of another.
inline uint64_t derive_seed(uint64_t base, std::string_view key) {
    std::string material = std::to_string(base);
    material.push_back('|');
    material.append(key);
    const std::string hex = sha256_hex(material);
    uint64_t out = 0;
    for (int i = 0; i < 16; ++i) {
        char c = hex[static_cast<size_t>(i)];
        out = (out << 4) | static_cast<uint64_t>(c <= '9' ? c - '0' : c - 'a' + 10);
    }
    return out;
}

}  // namespace pkeval

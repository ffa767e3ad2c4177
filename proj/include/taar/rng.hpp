#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace taar {

// Seeded draws in this project avoid std::uniform_int_distribution and
// std::shuffle: both are implementation-defined across standard libraries,
// and dataset splits / cut plans must reproduce byte-identically everywhere.

// Uniform integer in [0, n) via rejection sampling over raw mt19937 output.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

template <typename T>
void fisher_yates_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

// k distinct elements drawn from pool, in draw order.
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t k,
                                          std::mt19937_64& rng) {
    if (k > pool.size()) throw std::invalid_argument("sample size exceeds population");
    std::vector<T> out;
    out.reserve(k);
    std::size_t remaining = pool.size();
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = static_cast<std::size_t>(uniform_below(rng, remaining));
        out.push_back(pool[j]);
        std::swap(pool[j], pool[remaining - 1]);
        --remaining;
    }
    return out;
}

} // namespace taar

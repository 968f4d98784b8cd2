#ifndef GRN_RANDOM_HPP
#define GRN_RANDOM_HPP

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace grn {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Independent stream seed for (seed, tag, indices...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::initializer_list<std::uint64_t> ids = {}) {
    std::uint64_t h = splitmix64(seed);
    for (char ch : tag) h = splitmix64(h ^ static_cast<unsigned char>(ch));
    for (auto id : ids) h = splitmix64(h ^ id);
    return h;
}

/// Fisher-Yates using raw engine draws, so orders do not depend on the
/// standard library's distribution implementations.
template <typename T>
void shuffle_in_place(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace grn

#endif  // GRN_RANDOM_HPP

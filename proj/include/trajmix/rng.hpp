#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace trajmix {

/// Deterministic random generator. Normal and categorical draws are produced
/// from raw uniforms so sequences do not depend on the standard library's
/// distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on two fresh uniforms.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    /// Index draw by inverse CDF; probs must sum to ~1.
    int categorical(const std::vector<double>& probs) {
        const double u = uniform();
        double acc = 0.0;
        for (std::size_t k = 0; k < probs.size(); ++k) {
            acc += probs[k];
            if (u < acc) return static_cast<int>(k);
        }
        return static_cast<int>(probs.size()) - 1;
    }

    int uniform_int(int n) {  // in [0, n)
        return static_cast<int>(uniform() * static_cast<double>(n)) % n;
    }

private:
    std::mt19937_64 engine_;
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
}  // namespace detail

/// Derives independent named streams from one root seed, so per-patient /
/// per-fold randomness is identical no matter how work is scheduled.
class RngFactory {
public:
    explicit RngFactory(std::uint64_t root_seed) : root_(root_seed) {}

    std::uint64_t root() const { return root_; }

    Rng stream(std::string_view name, std::uint64_t a = 0, std::uint64_t b = 0) const {
        std::uint64_t h = detail::splitmix64(root_ ^ 0x243f6a8885a308d3ull);
        for (const char c : name) {
            h = detail::splitmix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
        }
        h = detail::splitmix64(h ^ a);
        h = detail::splitmix64(h ^ (b + 0x452821e638d01377ull));
        return Rng(h);
    }

private:
    std::uint64_t root_;
};

}  // namespace trajmix

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <utility>

namespace purge {

/// splitmix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Folds `tags` into `base`. Order-sensitive.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) noexcept;

/// Seeded generator whose every output is fixed by the C++ standard
/// (mt19937_64 plus hand-written conversions), so runs reproduce bit for bit
/// across standard libraries. std::*_distribution is implementation-defined
/// and is not used anywhere in the project.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (cosine branch only).
    double normal();

    /// Uniform integer in [0, bound). bound must be positive.
    std::uint64_t below(std::uint64_t bound);

    template <class T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace purge

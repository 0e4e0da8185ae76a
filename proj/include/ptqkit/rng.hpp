#pragma once

#include <cstdint>
#include <random>

namespace ptqkit {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// mt19937_64 with portable uniform/normal draws. Each (seed, stream) pair
/// gets an independent sequence, so adding streams never perturbs others.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream = 0);

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept;
    /// Uniform on (0, 1].
    double uniform_open() noexcept { return 1.0 - uniform(); }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    double normal() noexcept;
    std::uint64_t next() noexcept { return engine_(); }
    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept;

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace ptqkit

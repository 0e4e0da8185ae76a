#include "ptqkit/synthdata.hpp"

#include "ptqkit/error.hpp"
#include "ptqkit/rng.hpp"

#include <cmath>
#include <vector>

namespace ptqkit {

std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : engine_(splitmix64(splitmix64(seed) ^ splitmix64(~stream))) {}

double Rng::uniform() noexcept
{
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() noexcept
{
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t n) noexcept
{
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
}

void SynthSpec::validate() const
{
    if (channels == 0 || tokens == 0 || samples == 0)
        throw ContractError("synth spec: channels, tokens and samples must be positive");
    if (!(range_ratio >= 1.0))
        throw ContractError("synth spec: range ratio must be >= 1");
    if (!(base_std > 0.0))
        throw ContractError("synth spec: base stddev must be positive");
    if (left_fraction < 0.0 || right_fraction < 0.0 || left_fraction + right_fraction > 1.0)
        throw ContractError("synth spec: asymmetry fractions must lie in [0, 1] and sum to at most 1");
    if (outlier_prob < 0.0 || outlier_prob > 1.0)
        throw ContractError("synth spec: outlier probability outside [0, 1]");
    if (!(outlier_low >= 0.0 && outlier_high >= outlier_low))
        throw ContractError("synth spec: outlier magnitude band invalid");
    if (!(powerlaw_exponent > 0.0))
        throw ContractError("synth spec: power-law exponent must be positive");
}

Tensor gen_interchannel(const SynthSpec& spec)
{
    spec.validate();
    const std::size_t d = spec.channels, rows = spec.samples * spec.tokens;
    Tensor out({spec.samples, spec.tokens, d});
    for (std::size_t c = 0; c < d; ++c) {
        Rng rng(spec.seed, c);
        const double sigma = spec.base_std * std::pow(spec.range_ratio, rng.uniform());
        const double side_draw = rng.uniform();
        const int side = side_draw < spec.left_fraction                         ? -1
                         : side_draw < spec.left_fraction + spec.right_fraction ? 1
                                                                                : 0;
        const double mean = spec.mean_offset * sigma * rng.normal();
        Rng draws(splitmix64(spec.seed) ^ spec.sample_seed, c);
        for (std::size_t r = 0; r < rows; ++r) {
            double v = sigma * draws.normal();
            if (draws.uniform() < spec.outlier_prob) {
                const double sign = side != 0 ? side : (draws.uniform() < 0.5 ? -1.0 : 1.0);
                v = sign * sigma * draws.uniform(spec.outlier_low, spec.outlier_high);
            }
            out(r, c) = v + mean;
        }
    }
    return out;
}

Tensor gen_powerlaw(const SynthSpec& spec)
{
    spec.validate();
    const std::size_t n = spec.tokens;
    Tensor out({spec.samples, n, n});
    std::vector<double> w(n);
    for (std::size_t s = 0; s < spec.samples; ++s) {
        for (std::size_t r = 0; r < n; ++r) {
            Rng rng(splitmix64(spec.seed) ^ spec.sample_seed, s * n + r);
            double total = 0.0;
            for (auto& v : w) {
                // exp(Exponential(alpha)) is Pareto with tail exponent alpha.
                v = std::exp(-std::log(rng.uniform_open()) / spec.powerlaw_exponent);
                total += v;
            }
            auto row = out.row(s * n + r);
            for (std::size_t j = 0; j < n; ++j)
                row[j] = w[j] / total;
        }
    }
    return out;
}

}  // namespace ptqkit

#pragma once

#include "ptqkit/tensor.hpp"

#include <cstddef>
#include <cstdint>

namespace ptqkit {

struct SynthSpec {
    std::size_t channels = 384;
    std::size_t tokens = 32;
    std::size_t samples = 128;
    /// Ratio between the largest and smallest channel stddev.
    double range_ratio = 33.0;
    double base_std = 1.0;
    /// Channels whose outliers are all negative (left) or all positive (right);
    /// the rest get outliers of random sign.
    double left_fraction = 1.0 / 3.0;
    double right_fraction = 1.0 / 3.0;
    double outlier_prob = 0.005;
    /// Outlier magnitude is U(low, high) channel stddevs.
    double outlier_low = 4.0;
    double outlier_high = 7.0;
    /// Channel means are offset by mean_offset * stddev * N(0, 1).
    double mean_offset = 1.0;
    /// Tail exponent of the softmax-like generator.
    double powerlaw_exponent = 2.0;
    /// Channel statistics depend on `seed` only; the values themselves also
    /// on `sample_seed`, so draws with different sample seeds share
    /// per-channel stddevs, means and outlier sides.
    std::uint64_t seed = 0;
    std::uint64_t sample_seed = 0;

    /// Throws ContractError.
    void validate() const;
};

/// Per-channel Gaussian data [S x N x D], channel stddev log-uniform on
/// [base_std, range_ratio * base_std], with biased heavy-tail outliers.
/// Channel d draws from its own streams only.
Tensor gen_interchannel(const SynthSpec& spec);

/// Softmax-like rows [S x N x N]: exp of Pareto logits, normalized per row.
/// Row r of sample s draws from stream s * N + r of (seed, sample_seed).
Tensor gen_powerlaw(const SynthSpec& spec);

}  // namespace ptqkit

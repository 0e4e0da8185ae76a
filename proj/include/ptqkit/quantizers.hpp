#pragma once

#include "ptqkit/tensor.hpp"

#include <cstddef>
#include <vector>

namespace ptqkit {

enum class Granularity { layer, channel };

constexpr int kMinBits = 2;
constexpr int kMaxBits = 16;

/// Largest code of a b-bit quantizer, 2^b - 1.
double max_code(int bits);

/// Affine quantizer parameters. Channel-wise vectors are indexed by the last
/// axis of the quantized tensor.
///
/// zero_point is normally integral. The reparameterization code keeps an
/// unrounded variant around for its exact-mean regime, so integrality is
/// checked by is_integral() instead of validate().
struct UniformQuantParams {
    std::vector<double> scale;
    std::vector<double> zero_point;
    int bits = 8;
    Granularity granularity = Granularity::layer;

    std::size_t channels() const noexcept { return scale.size(); }
    void validate() const;
    bool is_integral() const noexcept;
};

enum class LogBase { two, sqrt_two };

struct LogQuantParams {
    double scale = 1.0;
    LogBase base = LogBase::two;
    int bits = 4;

    void validate() const;
};

/// Per-channel (or single global) calibration bounds.
struct CalibRange {
    std::vector<double> upper;
    std::vector<double> lower;
    Granularity granularity = Granularity::layer;

    std::size_t channels() const noexcept { return upper.size(); }
    void validate() const;
};

/// s = (upper - lower) / (2^b - 1), z = clamp(round(-lower / s), 0, 2^b - 1).
/// Throws DegenerateRangeError when upper == lower on a channel.
UniformQuantParams params_from_range(const CalibRange& range, int bits);

/// Same scale, zero point left unrounded (continuous). Used while learning
/// clipping bounds.
UniformQuantParams continuous_params_from_range(const CalibRange& range, int bits);

/// Widens channels with upper == lower symmetrically by
/// max(1e-8, 1e-6 * |upper|). Indices of widened channels are appended to
/// `widened` when given.
CalibRange widen_degenerate(CalibRange range, std::vector<std::size_t>* widened = nullptr);

/// clip(round(x / s + z), 0, 2^b - 1). With integral z this is the usual
/// clip(round(x / s) + z); the offset is applied before rounding so a
/// fractional zero point still produces integral codes.
Tensor uniform_quant(const Tensor& x, const UniformQuantParams& p);
/// s * (code - z). Throws ContractError on non-integral or out-of-range codes.
Tensor uniform_dequant(const Tensor& codes, const UniformQuantParams& p);
Tensor uniform_fake_quant(const Tensor& x, const UniformQuantParams& p);

/// clip(round(-log_base(x / s)), 0, 2^b - 1). Exact zeros are replaced by a
/// value below the smallest level so they take the largest code; negative or
/// NaN inputs throw DomainError.
Tensor log_quant(const Tensor& x, const LogQuantParams& p);
/// s * base^(-code).
Tensor log_dequant(const Tensor& codes, const LogQuantParams& p);
Tensor log_fake_quant(const Tensor& x, const LogQuantParams& p);

/// Per-channel (last axis) or global min/max over every sample.
CalibRange calibrate_minmax(const Tensor& samples, Granularity granularity);

/// upper = q-quantile, lower = (1 - q)-quantile with linear interpolation
/// between order statistics. Requires 0.5 < q <= 1; q == 1 is min/max.
CalibRange calibrate_percentile(const Tensor& samples, Granularity granularity, double q);

/// Linear-interpolated quantile of `values` (sorted in place).
double quantile(std::vector<double>& values, double q);

}  // namespace ptqkit

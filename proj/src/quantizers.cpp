#include "ptqkit/quantizers.hpp"

#include "ptqkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ptqkit {

namespace {

void check_bits(int bits)
{
    if (bits < kMinBits || bits > kMaxBits)
        throw ContractError("bit-width " + std::to_string(bits) + " outside [" + std::to_string(kMinBits) + ", " +
                            std::to_string(kMaxBits) + "]");
}

// Index into a per-channel vector for flat element i of a tensor with `cols` columns.
inline std::size_t channel_of(std::size_t i, std::size_t cols, std::size_t channels)
{
    return channels == 1 ? 0 : i % cols;
}

void check_channels(const Tensor& x, std::size_t channels, const char* op)
{
    if (channels != 1 && x.cols() != channels)
        throw DimensionError(std::string(op) + ": tensor " + shape_to_string(x.shape()) + " has " +
                             std::to_string(x.cols()) + " channels, quantizer has " + std::to_string(channels));
}

void check_code(double code, double top, const char* op)
{
    if (code != std::floor(code) || code < 0.0 || code > top)
        throw ContractError(std::string(op) + ": invalid code " + std::to_string(code));
}

double log_steps_per_octave(LogBase base)
{
    return base == LogBase::two ? 1.0 : 2.0;
}

}  // namespace

double max_code(int bits)
{
    check_bits(bits);
    return std::ldexp(1.0, bits) - 1.0;
}

void UniformQuantParams::validate() const
{
    check_bits(bits);
    if (scale.empty() || scale.size() != zero_point.size())
        throw ContractError("uniform quantizer: scale and zero-point lengths differ or are empty");
    if (granularity == Granularity::layer && scale.size() != 1)
        throw ContractError("uniform quantizer: layer-wise params must have length 1");
    const double top = max_code(bits);
    for (std::size_t c = 0; c < scale.size(); ++c) {
        if (!(scale[c] > 0.0) || !std::isfinite(scale[c]))
            throw ContractError("uniform quantizer: non-positive scale on channel " + std::to_string(c));
        if (!(zero_point[c] >= 0.0 && zero_point[c] <= top))
            throw ContractError("uniform quantizer: zero-point out of range on channel " + std::to_string(c));
    }
}

bool UniformQuantParams::is_integral() const noexcept
{
    return std::all_of(zero_point.begin(), zero_point.end(), [](double z) { return z == std::floor(z); });
}

void LogQuantParams::validate() const
{
    check_bits(bits);
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw ContractError("log quantizer: non-positive scale");
}

void CalibRange::validate() const
{
    if (upper.empty() || upper.size() != lower.size())
        throw CalibrationError("calibration range: bound lengths differ or are empty");
    if (granularity == Granularity::layer && upper.size() != 1)
        throw CalibrationError("calibration range: layer-wise range must be scalar");
    for (std::size_t c = 0; c < upper.size(); ++c) {
        if (!std::isfinite(upper[c]) || !std::isfinite(lower[c]))
            throw CalibrationError("calibration range: non-finite bound on channel " + std::to_string(c));
        if (upper[c] < lower[c])
            throw CalibrationError("calibration range: upper < lower on channel " + std::to_string(c));
    }
}

UniformQuantParams continuous_params_from_range(const CalibRange& range, int bits)
{
    range.validate();
    const double top = max_code(bits);
    UniformQuantParams p;
    p.bits = bits;
    p.granularity = range.granularity;
    p.scale.resize(range.channels());
    p.zero_point.resize(range.channels());
    for (std::size_t c = 0; c < range.channels(); ++c) {
        if (range.upper[c] == range.lower[c])
            throw DegenerateRangeError("degenerate calibration range on channel " + std::to_string(c));
        p.scale[c] = (range.upper[c] - range.lower[c]) / top;
        p.zero_point[c] = std::clamp(-range.lower[c] / p.scale[c], 0.0, top);
    }
    return p;
}

UniformQuantParams params_from_range(const CalibRange& range, int bits)
{
    UniformQuantParams p = continuous_params_from_range(range, bits);
    const double top = max_code(bits);
    for (std::size_t c = 0; c < range.channels(); ++c)
        p.zero_point[c] = std::clamp(round_half_to_even(-range.lower[c] / p.scale[c]), 0.0, top);
    return p;
}

CalibRange widen_degenerate(CalibRange range, std::vector<std::size_t>* widened)
{
    for (std::size_t c = 0; c < range.channels(); ++c) {
        if (range.upper[c] == range.lower[c]) {
            const double w = std::max(1e-8, 1e-6 * std::abs(range.upper[c]));
            range.upper[c] += w;
            range.lower[c] -= w;
            if (widened)
                widened->push_back(c);
        }
    }
    return range;
}

Tensor uniform_quant(const Tensor& x, const UniformQuantParams& p)
{
    p.validate();
    check_channels(x, p.channels(), "uniform_quant");
    const double top = max_code(p.bits);
    const std::size_t cols = x.cols();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t c = channel_of(i, cols, p.channels());
        out[i] = std::clamp(round_half_to_even(x[i] / p.scale[c] + p.zero_point[c]), 0.0, top);
    }
    return out;
}

Tensor uniform_dequant(const Tensor& codes, const UniformQuantParams& p)
{
    p.validate();
    check_channels(codes, p.channels(), "uniform_dequant");
    const double top = max_code(p.bits);
    const std::size_t cols = codes.cols();
    Tensor out(codes.shape());
    for (std::size_t i = 0; i < codes.size(); ++i) {
        check_code(codes[i], top, "uniform_dequant");
        const std::size_t c = channel_of(i, cols, p.channels());
        out[i] = p.scale[c] * (codes[i] - p.zero_point[c]);
    }
    return out;
}

Tensor uniform_fake_quant(const Tensor& x, const UniformQuantParams& p)
{
    return uniform_dequant(uniform_quant(x, p), p);
}

Tensor log_quant(const Tensor& x, const LogQuantParams& p)
{
    p.validate();
    const double top = max_code(p.bits);
    const double k = log_steps_per_octave(p.base);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        if (std::isnan(v) || v < 0.0)
            throw DomainError("log_quant: negative or NaN input");
        // A zero sits below every level, i.e. it takes the largest code.
        if (v == 0.0) {
            out[i] = top;
            continue;
        }
        out[i] = std::clamp(round_half_to_even(-k * std::log2(v / p.scale)), 0.0, top);
    }
    return out;
}

Tensor log_dequant(const Tensor& codes, const LogQuantParams& p)
{
    p.validate();
    const double top = max_code(p.bits);
    Tensor out(codes.shape());
    for (std::size_t i = 0; i < codes.size(); ++i) {
        check_code(codes[i], top, "log_dequant");
        if (p.base == LogBase::two) {
            out[i] = p.scale * std::ldexp(1.0, -static_cast<int>(codes[i]));
        } else {
            out[i] = p.scale * std::exp2(-codes[i] / 2.0);
        }
    }
    return out;
}

Tensor log_fake_quant(const Tensor& x, const LogQuantParams& p)
{
    return log_dequant(log_quant(x, p), p);
}

CalibRange calibrate_minmax(const Tensor& samples, Granularity granularity)
{
    if (samples.empty())
        throw CalibrationError("calibrate_minmax: empty sample set");
    CalibRange r;
    r.granularity = granularity;
    if (granularity == Granularity::layer) {
        const auto [lo, hi] = std::minmax_element(samples.values().begin(), samples.values().end());
        r.upper = {*hi};
        r.lower = {*lo};
        return r;
    }
    const std::size_t cols = samples.cols();
    r.upper.assign(cols, -INFINITY);
    r.lower.assign(cols, INFINITY);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::size_t c = i % cols;
        r.upper[c] = std::max(r.upper[c], samples[i]);
        r.lower[c] = std::min(r.lower[c], samples[i]);
    }
    return r;
}

double quantile(std::vector<double>& values, double q)
{
    if (values.empty())
        throw CalibrationError("quantile of empty set");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

CalibRange calibrate_percentile(const Tensor& samples, Granularity granularity, double q)
{
    if (!(q > 0.5 && q <= 1.0))
        throw ContractError("calibrate_percentile: q must lie in (0.5, 1]");
    if (samples.empty())
        throw CalibrationError("calibrate_percentile: empty sample set");
    if (q == 1.0)
        return calibrate_minmax(samples, granularity);
    CalibRange r;
    r.granularity = granularity;
    if (granularity == Granularity::layer) {
        std::vector<double> v(samples.values());
        r.upper = {quantile(v, q)};
        r.lower = {quantile(v, 1.0 - q)};
        return r;
    }
    const std::size_t cols = samples.cols(), rows = samples.rows();
    std::vector<double> column(rows);
    for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t i = 0; i < rows; ++i)
            column[i] = samples(i, c);
        r.upper.push_back(quantile(column, q));
        r.lower.push_back(quantile(column, 1.0 - q));
    }
    return r;
}

}  // namespace ptqkit

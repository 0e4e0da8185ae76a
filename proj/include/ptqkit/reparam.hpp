#pragma once

#include "ptqkit/layers.hpp"
#include "ptqkit/quantizers.hpp"
#include "ptqkit/tensor.hpp"

#include <span>
#include <vector>

namespace ptqkit {

/// How the layer-wise scale is chosen from the channel scales.
enum class ScaleCenter { mean, median, geometric_mean };

/// exact:   r2 = z - mean(z); the layer zero point mean(z) stays fractional
///          (recorded in exact_quant) and is rounded only for deployment.
/// rounded: the mean is rounded first and r2 = z - round(mean(z)) is
///          integral, so the deployed quantizer reproduces the channel-wise
///          codes exactly.
enum class ZeroPointRegime { exact, rounded };

struct ReparamOptions {
    ScaleCenter center = ScaleCenter::mean;
    ZeroPointRegime regime = ZeroPointRegime::rounded;
};

struct ReparamResult {
    /// Layer-wise quantizer for deployment, integral zero point.
    UniformQuantParams new_quant;
    /// Layer-wise quantizer with the zero point used to derive r2.
    UniformQuantParams exact_quant;
    LayerNormParams new_ln;
    /// One entry per consumer of the LayerNorm output, in input order.
    std::vector<LinearLayerParams> new_linear;
    std::vector<double> r1;
    std::vector<double> r2;
    double z_tilde = 0.0;
    /// z_tilde - round(z_tilde); zero offset in the rounded regime.
    double z_residual = 0.0;
};

/// Folds a channel-wise activation quantizer on a LayerNorm output into a
/// layer-wise one. gamma/beta absorb the variation factors r1 = s / s~ and
/// r2 = z - z~, and every consumer layer gets W~ = r1 (row-wise) * W and
/// b~ = b - (s * r2) W so its outputs are unchanged.
ReparamResult reparam_layernorm(const UniformQuantParams& channel_quant, const LayerNormParams& ln,
                                std::span<const LinearLayerParams> consumers, const ReparamOptions& options = {});

ReparamResult reparam_layernorm(const UniformQuantParams& channel_quant, const LayerNormParams& ln,
                                const LinearLayerParams& next, const ReparamOptions& options = {});

/// (X' + s * r2) / r1, broadcast over rows.
Tensor shifted_activation(const Tensor& x_prime, std::span<const double> r1, std::span<const double> r2,
                          std::span<const double> s);

struct Log2Reparam {
    /// s~ * 2^floor(-code / 2), equal to the base-sqrt(2) dequantization.
    Tensor dequant;
    /// Per-element parity-adjusted scale s * (parity * (sqrt(2) - 1) + 1).
    Tensor s_tilde;
};

/// Rewrites base-sqrt(2) dequantization as a parity-scaled base-2 shift.
Log2Reparam reparam_log_sqrt2(const Tensor& codes, const LogQuantParams& p);

/// Parity-scaled scale of one code.
double parity_scale(double scale, double code) noexcept;

}  // namespace ptqkit

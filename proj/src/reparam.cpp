#include "ptqkit/reparam.hpp"

#include "ptqkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace ptqkit {

namespace {

double center_of(std::vector<double> s, ScaleCenter center)
{
    const double n = static_cast<double>(s.size());
    switch (center) {
    case ScaleCenter::mean:
        return std::accumulate(s.begin(), s.end(), 0.0) / n;
    case ScaleCenter::median: {
        std::sort(s.begin(), s.end());
        const std::size_t m = s.size() / 2;
        return s.size() % 2 ? s[m] : 0.5 * (s[m - 1] + s[m]);
    }
    case ScaleCenter::geometric_mean: {
        double acc = 0.0;
        for (double v : s)
            acc += std::log(v);
        return std::exp(acc / n);
    }
    }
    return 0.0;
}

}  // namespace

ReparamResult reparam_layernorm(const UniformQuantParams& cw, const LayerNormParams& ln,
                                std::span<const LinearLayerParams> consumers, const ReparamOptions& options)
{
    cw.validate();
    ln.validate();
    if (cw.granularity != Granularity::channel)
        throw ContractError("reparam_layernorm: expected a channel-wise quantizer");
    const std::size_t d = cw.channels();
    if (ln.dim() != d)
        throw DimensionError("reparam_layernorm: quantizer has " + std::to_string(d) + " channels, LayerNorm has " +
                             std::to_string(ln.dim()));
    for (const auto& next : consumers) {
        next.validate();
        if (next.in_features() != d)
            throw DimensionError("reparam_layernorm: consumer expects " + std::to_string(next.in_features()) +
                                 " inputs, LayerNorm produces " + std::to_string(d));
    }

    const double s_tilde = center_of(cw.scale, options.center);
    if (!(s_tilde > 0.0))
        throw ContractError("reparam_layernorm: degenerate layer-wise scale");
    const double z_tilde = std::accumulate(cw.zero_point.begin(), cw.zero_point.end(), 0.0) / static_cast<double>(d);
    const double z_rounded = round_half_to_even(z_tilde);
    const double z_used = options.regime == ZeroPointRegime::exact ? z_tilde : z_rounded;

    ReparamResult out;
    out.z_tilde = z_tilde;
    out.z_residual = z_tilde - z_rounded;
    out.r1.resize(d);
    out.r2.resize(d);
    out.new_ln = ln;
    std::vector<double> shift(d);
    for (std::size_t c = 0; c < d; ++c) {
        out.r1[c] = cw.scale[c] / s_tilde;
        out.r2[c] = cw.zero_point[c] - z_used;
        shift[c] = cw.scale[c] * out.r2[c];
        out.new_ln.gamma[c] = ln.gamma[c] / out.r1[c];
        out.new_ln.beta[c] = (ln.beta[c] + shift[c]) / out.r1[c];
    }

    for (const auto& next : consumers) {
        LinearLayerParams adj = next;
        const std::size_t h = next.out_features();
        for (std::size_t j = 0; j < h; ++j) {
            double comp = 0.0;
            for (std::size_t c = 0; c < d; ++c)
                comp += shift[c] * next.weight(c, j);
            adj.bias[j] = next.bias[j] - comp;
        }
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t j = 0; j < h; ++j)
                adj.weight(c, j) = out.r1[c] * next.weight(c, j);
        out.new_linear.push_back(std::move(adj));
    }

    out.new_quant = UniformQuantParams{{s_tilde}, {z_rounded}, cw.bits, Granularity::layer};
    out.exact_quant = UniformQuantParams{{s_tilde}, {z_used}, cw.bits, Granularity::layer};
    return out;
}

ReparamResult reparam_layernorm(const UniformQuantParams& cw, const LayerNormParams& ln, const LinearLayerParams& next,
                                const ReparamOptions& options)
{
    return reparam_layernorm(cw, ln, std::span<const LinearLayerParams>(&next, 1), options);
}

Tensor shifted_activation(const Tensor& x_prime, std::span<const double> r1, std::span<const double> r2,
                          std::span<const double> s)
{
    const std::size_t d = x_prime.cols();
    if (r1.size() != d || r2.size() != d || s.size() != d)
        throw DimensionError("shifted_activation: factor lengths must equal " + std::to_string(d));
    Tensor out(x_prime.shape());
    for (std::size_t i = 0; i < x_prime.size(); ++i) {
        const std::size_t c = i % d;
        out[i] = (x_prime[i] + s[c] * r2[c]) / r1[c];
    }
    return out;
}

double parity_scale(double scale, double code) noexcept
{
    const double parity = std::fmod(code, 2.0);
    return scale * (parity * (std::numbers::sqrt2 - 1.0) + 1.0);
}

Log2Reparam reparam_log_sqrt2(const Tensor& codes, const LogQuantParams& p)
{
    p.validate();
    if (p.base != LogBase::sqrt_two)
        throw ContractError("reparam_log_sqrt2: quantizer base must be sqrt(2)");
    const double top = max_code(p.bits);
    Log2Reparam out{Tensor(codes.shape()), Tensor(codes.shape())};
    for (std::size_t i = 0; i < codes.size(); ++i) {
        const double c = codes[i];
        if (c != std::floor(c) || c < 0.0 || c > top)
            throw ContractError("reparam_log_sqrt2: invalid code " + std::to_string(c));
        const double s_tilde = parity_scale(p.scale, c);
        const int shift = static_cast<int>(std::floor(-c / 2.0));
        out.s_tilde[i] = s_tilde;
        out.dequant[i] = std::ldexp(s_tilde, shift);
    }
    return out;
}

}  // namespace ptqkit

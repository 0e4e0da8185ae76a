#include "ptqkit/gptq.hpp"

#include "ptqkit/error.hpp"

#include <algorithm>
#include <cmath>

namespace ptqkit {

HessianAccumulator::HessianAccumulator(std::size_t dim) : h_({dim, dim}) {}

void HessianAccumulator::accumulate(const Tensor& x_batch)
{
    const std::size_t d = x_batch.cols();
    if (h_.empty())
        h_ = Tensor({d, d});
    if (d != dim())
        throw DimensionError("accumulate_hessian: batch has " + std::to_string(d) + " features, accumulator has " +
                             std::to_string(dim()));
    const std::size_t rows = x_batch.rows();
    for (std::size_t r = 0; r < rows; ++r) {
        auto x = x_batch.row(r);
        for (std::size_t i = 0; i < d; ++i) {
            const double xi = 2.0 * x[i];
            if (xi == 0.0)
                continue;
            auto hrow = h_.row(i);
            for (std::size_t j = i; j < d; ++j)
                hrow[j] += xi * x[j];
        }
    }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < i; ++j)
            h_(i, j) = h_(j, i);
    count_ += rows;
}

HessianAccumulator accumulate_hessian(HessianAccumulator acc, const Tensor& x_batch)
{
    acc.accumulate(x_batch);
    return acc;
}

UniformQuantParams weight_quant_params(const Tensor& weight, int bits)
{
    return params_from_range(widen_degenerate(calibrate_minmax(weight, Granularity::channel)), bits);
}

bool cholesky_lower(const Tensor& a, Tensor& lower)
{
    const std::size_t n = a.dim(0);
    lower = Tensor({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = a(i, j);
            for (std::size_t k = 0; k < j; ++k)
                acc -= lower(i, k) * lower(j, k);
            if (i == j) {
                if (!(acc > 0.0))
                    return false;
                lower(i, i) = std::sqrt(acc);
            } else {
                lower(i, j) = acc / lower(j, j);
            }
        }
    }
    return true;
}

bool spd_inverse(const Tensor& a, Tensor& inverse)
{
    Tensor l;
    if (!cholesky_lower(a, l))
        return false;
    const std::size_t n = a.dim(0);
    // L^{-1} by forward substitution, then A^{-1} = L^{-T} L^{-1}.
    Tensor linv({n, n});
    for (std::size_t col = 0; col < n; ++col) {
        for (std::size_t i = col; i < n; ++i) {
            double acc = i == col ? 1.0 : 0.0;
            for (std::size_t k = col; k < i; ++k)
                acc -= l(i, k) * linv(k, col);
            linv(i, col) = acc / l(i, i);
        }
    }
    inverse = Tensor({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = 0.0;
            for (std::size_t k = i; k < n; ++k)
                acc += linv(k, i) * linv(k, j);
            inverse(i, j) = acc;
            inverse(j, i) = acc;
        }
    }
    return true;
}

namespace {

void quantize_row(std::span<const double> w, const UniformQuantParams& wq, std::span<double> codes,
                  std::span<double> deq)
{
    const double top = max_code(wq.bits);
    for (std::size_t j = 0; j < w.size(); ++j) {
        const std::size_t c = wq.channels() == 1 ? 0 : j;
        const double q = std::clamp(round_half_to_even(w[j] / wq.scale[c] + wq.zero_point[c]), 0.0, top);
        codes[j] = q;
        deq[j] = wq.scale[c] * (q - wq.zero_point[c]);
    }
}

void check_weight_quant(const Tensor& weight, const UniformQuantParams& wq)
{
    wq.validate();
    if (weight.rank() != 2)
        throw DimensionError("weight quantization expects a matrix, got " + shape_to_string(weight.shape()));
    if (wq.channels() != 1 && wq.channels() != weight.dim(1))
        throw DimensionError("weight quantizer has " + std::to_string(wq.channels()) + " channels, weight has " +
                             std::to_string(weight.dim(1)) + " outputs");
}

}  // namespace

WeightQuantResult rtn_quantize_layer(const Tensor& weight, const UniformQuantParams& wq)
{
    check_weight_quant(weight, wq);
    WeightQuantResult out{Tensor(weight.shape()), Tensor(weight.shape()), false};
    for (std::size_t i = 0; i < weight.dim(0); ++i)
        quantize_row(weight.row(i), wq, out.codes.row(i), out.dequant_weight.row(i));
    return out;
}

WeightQuantResult gptq_quantize_layer(const Tensor& weight, const HessianAccumulator& acc, const UniformQuantParams& wq,
                                      const GptqOptions& options)
{
    check_weight_quant(weight, wq);
    const std::size_t n = weight.dim(0), m = weight.dim(1);
    if (acc.sample_count() == 0 || acc.dim() != n)
        throw ContractError("gptq_quantize_layer: Hessian missing or sized for " + std::to_string(acc.dim()) +
                            " inputs, weight has " + std::to_string(n));

    Tensor h = acc.hessian();
    // Inputs that never fire carry no information; give them unit curvature.
    for (std::size_t i = 0; i < n; ++i) {
        if (h(i, i) == 0.0)
            h(i, i) = 1.0;
    }
    double diag_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        diag_mean += h(i, i);
    diag_mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        h(i, i) += options.damp_fraction * diag_mean;

    Tensor hinv, lower;
    if (!spd_inverse(h, hinv) || !cholesky_lower(hinv, lower)) {
        WeightQuantResult r = rtn_quantize_layer(weight, wq);
        r.cholesky_fallback = true;
        return r;
    }
    // Upper factor U = L^T of H^{-1}; U(i, k) = lower(k, i).
    auto upper = [&](std::size_t i, std::size_t k) { return lower(k, i); };

    Tensor w = weight;
    WeightQuantResult out{Tensor(weight.shape()), Tensor(weight.shape()), false};
    const std::size_t block = std::max<std::size_t>(1, options.block_size);
    std::vector<double> err(m);
    for (std::size_t b0 = 0; b0 < n; b0 += block) {
        const std::size_t b1 = std::min(b0 + block, n);
        Tensor block_err({b1 - b0, m});
        for (std::size_t i = b0; i < b1; ++i) {
            quantize_row(w.row(i), wq, out.codes.row(i), out.dequant_weight.row(i));
            const double d = upper(i, i);
            for (std::size_t j = 0; j < m; ++j)
                err[j] = (w(i, j) - out.dequant_weight(i, j)) / d;
            for (std::size_t k = i + 1; k < b1; ++k) {
                const double u = upper(i, k);
                for (std::size_t j = 0; j < m; ++j)
                    w(k, j) -= u * err[j];
            }
            std::copy(err.begin(), err.end(), block_err.row(i - b0).begin());
        }
        // Deferred update of every row after the block.
        for (std::size_t k = b1; k < n; ++k) {
            auto wk = w.row(k);
            for (std::size_t i = b0; i < b1; ++i) {
                const double u = upper(i, k);
                if (u == 0.0)
                    continue;
                auto e = block_err.row(i - b0);
                for (std::size_t j = 0; j < m; ++j)
                    wk[j] -= u * e[j];
            }
        }
    }
    return out;
}

double proxy_loss(const Tensor& weight, const Tensor& dequant_weight, const Tensor& h)
{
    if (weight.shape() != dequant_weight.shape() || h.rank() != 2 || h.dim(0) != weight.dim(0))
        throw DimensionError("proxy_loss: shapes " + shape_to_string(weight.shape()) + ", " +
                             shape_to_string(dequant_weight.shape()) + ", " + shape_to_string(h.shape()));
    const Tensor delta = sub(weight, dequant_weight);
    const Tensor hd = matmul(h, delta);
    double acc = 0.0;
    for (std::size_t i = 0; i < delta.size(); ++i)
        acc += delta[i] * hd[i];
    return acc;
}

}  // namespace ptqkit

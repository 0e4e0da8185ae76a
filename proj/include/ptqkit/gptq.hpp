#pragma once

#include "ptqkit/quantizers.hpp"
#include "ptqkit/tensor.hpp"

#include <cstddef>

namespace ptqkit {

/// Running H = sum over calibration rows of 2 x^T x.
class HessianAccumulator {
public:
    HessianAccumulator() = default;
    explicit HessianAccumulator(std::size_t dim);

    /// Adds 2 X^T X for a batch X of shape [rows x dim] (leading axes flattened).
    void accumulate(const Tensor& x_batch);

    const Tensor& hessian() const noexcept { return h_; }
    std::size_t dim() const noexcept { return h_.empty() ? 0 : h_.dim(0); }
    std::size_t sample_count() const noexcept { return count_; }

private:
    Tensor h_;
    std::size_t count_ = 0;
};

HessianAccumulator accumulate_hessian(HessianAccumulator acc, const Tensor& x_batch);

struct GptqOptions {
    /// Damping added to the diagonal, as a fraction of mean(diag(H)).
    double damp_fraction = 0.01;
    std::size_t block_size = 32;
};

struct WeightQuantResult {
    Tensor codes;
    Tensor dequant_weight;
    /// Set when factorization failed and round-to-nearest was used instead.
    bool cholesky_fallback = false;
};

/// Channel-wise (output column) min/max quantizer for a [in x out] weight.
UniformQuantParams weight_quant_params(const Tensor& weight, int bits);

/// Quantizes the input-dimension rows of `weight` [in x out] in order and
/// pushes each row's rounding error onto the rows not yet quantized through
/// the upper Cholesky factor of the damped inverse Hessian.
WeightQuantResult gptq_quantize_layer(const Tensor& weight, const HessianAccumulator& h, const UniformQuantParams& wq,
                                      const GptqOptions& options = {});

WeightQuantResult rtn_quantize_layer(const Tensor& weight, const UniformQuantParams& wq);

/// tr((W - W^)^T H (W - W^)) with the undamped H.
double proxy_loss(const Tensor& weight, const Tensor& dequant_weight, const Tensor& h);

/// Lower Cholesky factor of a symmetric positive definite matrix; returns
/// false when a pivot is not positive.
bool cholesky_lower(const Tensor& a, Tensor& lower);

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
bool spd_inverse(const Tensor& a, Tensor& inverse);

}  // namespace ptqkit

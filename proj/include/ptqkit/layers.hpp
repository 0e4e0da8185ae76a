#pragma once

#include "ptqkit/tensor.hpp"

#include <vector>

namespace ptqkit {

/// Affine factors of a LayerNorm over the last axis.
struct LayerNormParams {
    std::vector<double> gamma;
    std::vector<double> beta;
    double eps = 1e-6;

    std::size_t dim() const noexcept { return gamma.size(); }
    void validate() const;
};

/// y = x W + b with W stored [in x out].
struct LinearLayerParams {
    Tensor weight;
    std::vector<double> bias;

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
    void validate() const;
};

Tensor layernorm_forward(const Tensor& x, const LayerNormParams& p);
Tensor linear_forward(const Tensor& x, const LinearLayerParams& p);

}  // namespace ptqkit

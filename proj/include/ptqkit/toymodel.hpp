#pragma once

#include "ptqkit/layers.hpp"
#include "ptqkit/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ptqkit {

struct TransformerBlock {
    LayerNormParams ln1;
    LayerNormParams ln2;
    LinearLayerParams wq, wk, wv, wo;
    LinearLayerParams mlp_up;
    LinearLayerParams mlp_down;
    std::size_t heads = 1;

    std::size_t dim() const noexcept { return ln1.dim(); }
    void validate() const;
};

struct ToyModel {
    std::vector<TransformerBlock> blocks;
    std::size_t embed_dim = 0;
    std::size_t tokens = 0;

    void validate() const;
};

/// Matmul inputs a hook can intercept.
enum class Site { ln1_out, query, key, softmax, value, attn_out, ln2_out, mlp_hidden };

inline constexpr Site kAllSites[] = {Site::ln1_out, Site::query,    Site::key,     Site::softmax,
                                     Site::value,   Site::attn_out, Site::ln2_out, Site::mlp_hidden};

std::string site_name(Site site);
/// Throws FormatError on unknown names.
Site site_from_name(const std::string& name);

struct HookContext {
    std::size_t block = 0;
    Site site = Site::ln1_out;
};

/// Receives one sample's activation at a site and returns what the consuming
/// matmul sees. An empty hook is the identity.
using Hook = std::function<Tensor(const HookContext&, Tensor)>;

double gelu(double x) noexcept;

struct AttentionOutput {
    Tensor output;
    /// [heads x N x N]
    Tensor softmax;
};

/// Multi-head attention on one sample [N x D] with scores scaled by
/// 1 / sqrt(D / heads); returns the post-Wo projection.
AttentionOutput attention_forward(const Tensor& x_prime, const TransformerBlock& block, const Hook& hook = {},
                                  std::size_t block_index = 0);

/// X + MSA(LN1(X)), then + MLP(LN2(.)). Accepts one sample [N x D] or a batch
/// [S x N x D]; hooks always see one sample at a time.
Tensor block_forward(const Tensor& x, const TransformerBlock& block, const Hook& hook = {},
                     std::size_t block_index = 0);

Tensor model_forward(const Tensor& x, const ToyModel& model, const Hook& hook = {});

struct ModelSpec {
    std::size_t blocks = 2;
    std::size_t embed_dim = 64;
    std::size_t tokens = 16;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    /// LayerNorm gamma is log-uniform on [gamma_low, gamma_high] per channel.
    double gamma_low = 0.1;
    double gamma_high = 3.3;
    double beta_std = 0.5;
    std::uint64_t seed = 0;
};

ToyModel init_model(const ModelSpec& spec);

}  // namespace ptqkit

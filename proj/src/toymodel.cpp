#include "ptqkit/toymodel.hpp"

#include "ptqkit/error.hpp"
#include "ptqkit/rng.hpp"

#include <algorithm>
#include <cmath>

namespace ptqkit {

void LayerNormParams::validate() const
{
    if (gamma.empty() || gamma.size() != beta.size())
        throw DimensionError("LayerNorm: gamma has " + std::to_string(gamma.size()) + " entries, beta has " +
                             std::to_string(beta.size()));
    if (!(eps > 0.0))
        throw ContractError("LayerNorm: eps must be positive");
}

void LinearLayerParams::validate() const
{
    if (weight.rank() != 2)
        throw DimensionError("linear: weight must be a matrix, got " + shape_to_string(weight.shape()));
    if (bias.size() != weight.dim(1))
        throw DimensionError("linear: bias has " + std::to_string(bias.size()) + " entries for " +
                             std::to_string(weight.dim(1)) + " outputs");
}

Tensor layernorm_forward(const Tensor& x, const LayerNormParams& p)
{
    if (x.cols() != p.dim())
        throw DimensionError("layernorm_forward: input " + shape_to_string(x.shape()) + " vs " +
                             std::to_string(p.dim()) + " channels");
    const std::size_t d = p.dim();
    Tensor out(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        double mean = 0.0;
        for (double v : in)
            mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : in)
            var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + p.eps);
        for (std::size_t c = 0; c < d; ++c)
            o[c] = (in[c] - mean) * inv * p.gamma[c] + p.beta[c];
    }
    return out;
}

Tensor linear_forward(const Tensor& x, const LinearLayerParams& p)
{
    if (x.cols() != p.in_features())
        throw DimensionError("linear_forward: input " + shape_to_string(x.shape()) + " vs weight " +
                             shape_to_string(p.weight.shape()));
    const std::size_t n = p.in_features(), m = p.out_features();
    Shape shape = x.shape();
    shape.back() = m;
    Tensor out(shape);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        std::copy(p.bias.begin(), p.bias.end(), o.begin());
        for (std::size_t k = 0; k < n; ++k) {
            const double a = in[k];
            if (a == 0.0)
                continue;
            auto w = p.weight.row(k);
            for (std::size_t j = 0; j < m; ++j)
                o[j] += a * w[j];
        }
    }
    return out;
}

namespace {

void check_linear(const LinearLayerParams& p, std::size_t in, std::size_t out, const char* name)
{
    p.validate();
    if (p.in_features() != in || p.out_features() != out)
        throw DimensionError(std::string("block: ") + name + " is " + shape_to_string(p.weight.shape()) +
                             ", expected [" + std::to_string(in) + ", " + std::to_string(out) + "]");
}

Tensor apply(const Hook& hook, std::size_t block, Site site, Tensor t)
{
    if (!hook)
        return t;
    return hook(HookContext{block, site}, std::move(t));
}

}  // namespace

void TransformerBlock::validate() const
{
    ln1.validate();
    ln2.validate();
    const std::size_t d = dim();
    if (ln2.dim() != d)
        throw DimensionError("block: LayerNorm widths differ");
    if (heads == 0 || d % heads != 0)
        throw ContractError("block: " + std::to_string(heads) + " heads do not divide width " + std::to_string(d));
    check_linear(wq, d, d, "wq");
    check_linear(wk, d, d, "wk");
    check_linear(wv, d, d, "wv");
    check_linear(wo, d, d, "wo");
    mlp_up.validate();
    check_linear(mlp_up, d, mlp_up.out_features(), "mlp_up");
    check_linear(mlp_down, mlp_up.out_features(), d, "mlp_down");
}

void ToyModel::validate() const
{
    if (blocks.empty())
        throw ContractError("model has no blocks");
    for (const auto& b : blocks) {
        b.validate();
        if (b.dim() != embed_dim)
            throw DimensionError("model: block width " + std::to_string(b.dim()) + " differs from " +
                                 std::to_string(embed_dim));
    }
}

std::string site_name(Site site)
{
    switch (site) {
    case Site::ln1_out: return "ln1_out";
    case Site::query: return "query";
    case Site::key: return "key";
    case Site::softmax: return "softmax";
    case Site::value: return "value";
    case Site::attn_out: return "attn_out";
    case Site::ln2_out: return "ln2_out";
    case Site::mlp_hidden: return "mlp_hidden";
    }
    return "?";
}

Site site_from_name(const std::string& name)
{
    for (Site s : kAllSites) {
        if (site_name(s) == name)
            return s;
    }
    throw FormatError("unknown activation site '" + name + "'");
}

double gelu(double x) noexcept
{
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

AttentionOutput attention_forward(const Tensor& x_prime, const TransformerBlock& block, const Hook& hook,
                                  std::size_t block_index)
{
    if (x_prime.rank() != 2 || x_prime.cols() != block.dim())
        throw DimensionError("attention_forward: expected [N x " + std::to_string(block.dim()) + "], got " +
                             shape_to_string(x_prime.shape()));
    const std::size_t n = x_prime.dim(0), d = block.dim(), h = block.heads, dh = d / h;
    const Tensor q = apply(hook, block_index, Site::query, linear_forward(x_prime, block.wq));
    const Tensor k = apply(hook, block_index, Site::key, linear_forward(x_prime, block.wk));
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor probs({h, n, n});
    std::vector<double> row(n);
    for (std::size_t head = 0; head < h; ++head) {
        const std::size_t off = head * dh;
        for (std::size_t i = 0; i < n; ++i) {
            double top = -INFINITY;
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c)
                    acc += q(i, off + c) * k(j, off + c);
                row[j] = acc * inv_scale;
                top = std::max(top, row[j]);
            }
            double total = 0.0;
            for (auto& v : row) {
                v = std::exp(v - top);
                total += v;
            }
            for (std::size_t j = 0; j < n; ++j)
                probs(head * n + i, j) = row[j] / total;
        }
    }

    AttentionOutput out;
    out.softmax = probs;
    const Tensor a = apply(hook, block_index, Site::softmax, std::move(probs));
    const Tensor v = apply(hook, block_index, Site::value, linear_forward(x_prime, block.wv));
    Tensor ctx({n, d});
    for (std::size_t head = 0; head < h; ++head) {
        const std::size_t off = head * dh;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double p = a(head * n + i, j);
                for (std::size_t c = 0; c < dh; ++c)
                    ctx(i, off + c) += p * v(j, off + c);
            }
        }
    }
    out.output = linear_forward(apply(hook, block_index, Site::attn_out, std::move(ctx)), block.wo);
    return out;
}

Tensor block_forward(const Tensor& x, const TransformerBlock& block, const Hook& hook, std::size_t block_index)
{
    if (x.rank() == 3) {
        Tensor out(x.shape());
        const std::size_t per = x.dim(1) * x.dim(2);
        for (std::size_t s = 0; s < x.dim(0); ++s) {
            const Tensor y = block_forward(x.slice(s), block, hook, block_index);
            std::copy(y.values().begin(), y.values().end(), out.data().begin() + s * per);
        }
        return out;
    }
    if (x.rank() != 2 || x.cols() != block.dim())
        throw DimensionError("block_forward: expected [N x " + std::to_string(block.dim()) + "] or [S x N x D], got " +
                             shape_to_string(x.shape()));

    const Tensor x1 = apply(hook, block_index, Site::ln1_out, layernorm_forward(x, block.ln1));
    const Tensor xbar = add(x, attention_forward(x1, block, hook, block_index).output);
    const Tensor x2 = apply(hook, block_index, Site::ln2_out, layernorm_forward(xbar, block.ln2));
    Tensor hidden = linear_forward(x2, block.mlp_up);
    for (auto& v : hidden.data())
        v = gelu(v);
    hidden = apply(hook, block_index, Site::mlp_hidden, std::move(hidden));
    return add(xbar, linear_forward(hidden, block.mlp_down));
}

Tensor model_forward(const Tensor& x, const ToyModel& model, const Hook& hook)
{
    Tensor y = x;
    for (std::size_t b = 0; b < model.blocks.size(); ++b)
        y = block_forward(y, model.blocks[b], hook, b);
    return y;
}

namespace {

LinearLayerParams random_linear(Rng& rng, std::size_t in, std::size_t out)
{
    LinearLayerParams p{Tensor({in, out}), std::vector<double>(out)};
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& w : p.weight.data())
        w = std_dev * rng.normal();
    for (auto& b : p.bias)
        b = 0.02 * rng.normal();
    return p;
}

LayerNormParams random_layernorm(Rng& rng, std::size_t d, const ModelSpec& spec)
{
    LayerNormParams p{std::vector<double>(d), std::vector<double>(d)};
    const double lo = std::log(spec.gamma_low), hi = std::log(spec.gamma_high);
    for (std::size_t c = 0; c < d; ++c) {
        p.gamma[c] = std::exp(rng.uniform(lo, hi));
        p.beta[c] = spec.beta_std * p.gamma[c] * rng.normal();
    }
    return p;
}

}  // namespace

ToyModel init_model(const ModelSpec& spec)
{
    if (spec.blocks == 0 || spec.embed_dim == 0 || spec.tokens == 0 || spec.mlp_ratio == 0)
        throw ContractError("init_model: sizes must be positive");
    if (spec.heads == 0 || spec.embed_dim % spec.heads != 0)
        throw ContractError("init_model: heads must divide the embedding width");
    if (!(spec.gamma_low > 0.0 && spec.gamma_high >= spec.gamma_low))
        throw ContractError("init_model: gamma range must be positive and ordered");
    const std::size_t d = spec.embed_dim, hidden = spec.mlp_ratio * d;
    ToyModel model;
    model.embed_dim = d;
    model.tokens = spec.tokens;
    for (std::size_t b = 0; b < spec.blocks; ++b) {
        Rng rng(spec.seed, b);
        TransformerBlock blk;
        blk.heads = spec.heads;
        blk.ln1 = random_layernorm(rng, d, spec);
        blk.wq = random_linear(rng, d, d);
        blk.wk = random_linear(rng, d, d);
        blk.wv = random_linear(rng, d, d);
        blk.wo = random_linear(rng, d, d);
        blk.ln2 = random_layernorm(rng, d, spec);
        blk.mlp_up = random_linear(rng, d, hidden);
        blk.mlp_down = random_linear(rng, hidden, d);
        model.blocks.push_back(std::move(blk));
    }
    return model;
}

}  // namespace ptqkit

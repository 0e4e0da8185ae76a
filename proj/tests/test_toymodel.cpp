#include "ptqkit/error.hpp"
#include "ptqkit/quantizers.hpp"
#include "ptqkit/toymodel.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ptqkit;

namespace {

ModelSpec small_spec(std::uint64_t seed = 1)
{
    ModelSpec s;
    s.blocks = 2;
    s.embed_dim = 8;
    s.tokens = 5;
    s.heads = 2;
    s.seed = seed;
    return s;
}

Tensor gaussian(Shape shape, std::uint64_t seed)
{
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> n;
    Tensor x(std::move(shape));
    for (auto& v : x.data())
        v = n(gen);
    return x;
}

// Straight-line attention reference for one head layout.
Tensor naive_attention(const Tensor& x, const TransformerBlock& b)
{
    const std::size_t n = x.dim(0), d = b.dim(), h = b.heads, dh = d / h;
    auto lin = [&](const LinearLayerParams& p) {
        Tensor y({n, p.out_features()});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < p.out_features(); ++j) {
                double acc = p.bias[j];
                for (std::size_t k = 0; k < p.in_features(); ++k)
                    acc += x(i, k) * p.weight(k, j);
                y(i, j) = acc;
            }
        return y;
    };
    const Tensor q = lin(b.wq), k = lin(b.wk), v = lin(b.wv);
    Tensor ctx({n, d});
    for (std::size_t head = 0; head < h; ++head) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> sc(n);
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                double dot = 0.0;
                for (std::size_t c = head * dh; c < (head + 1) * dh; ++c)
                    dot += q(i, c) * k(j, c);
                sc[j] = std::exp(dot / std::sqrt(static_cast<double>(dh)));
                total += sc[j];
            }
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t c = head * dh; c < (head + 1) * dh; ++c)
                    ctx(i, c) += sc[j] / total * v(j, c);
        }
    }
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double acc = b.wo.bias[j];
            for (std::size_t k = 0; k < d; ++k)
                acc += ctx(i, k) * b.wo.weight(k, j);
            out(i, j) = acc;
        }
    return out;
}

}  // namespace

TEST(LayerNorm, ConstantRowIsZero)
{
    const LayerNormParams p{{1, 1, 1}, {0, 0, 0}};
    const Tensor y = layernorm_forward(Tensor::matrix({{4, 4, 4}}), p);
    for (double v : y.values())
        EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoValueRow)
{
    const LayerNormParams p{{1, 1}, {0, 0}, 1e-12};
    const Tensor y = layernorm_forward(Tensor::matrix({{1, 3}}), p);
    EXPECT_NEAR(y[0], -1.0, 1e-10);
    EXPECT_NEAR(y[1], 1.0, 1e-10);
}

TEST(LayerNorm, MatchesLoopOracleAndNormalizes)
{
    const Tensor x = gaussian({6, 10}, 3);
    LayerNormParams p{std::vector<double>(10, 1.0), std::vector<double>(10, 0.0)};
    const Tensor y = layernorm_forward(x, p);
    for (std::size_t r = 0; r < 6; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t c = 0; c < 10; ++c)
            mean += x(r, c) / 10.0;
        for (std::size_t c = 0; c < 10; ++c)
            var += (x(r, c) - mean) * (x(r, c) - mean) / 10.0;
        double ym = 0.0, yv = 0.0;
        for (std::size_t c = 0; c < 10; ++c) {
            EXPECT_NEAR(y(r, c), (x(r, c) - mean) / std::sqrt(var + 1e-6), 1e-12);
            ym += y(r, c) / 10.0;
        }
        for (std::size_t c = 0; c < 10; ++c)
            yv += (y(r, c) - ym) * (y(r, c) - ym) / 10.0;
        EXPECT_NEAR(ym, 0.0, 1e-12);
        EXPECT_NEAR(yv, 1.0, 1e-5);
    }
}

TEST(Attention, SingleTokenAttendsToItself)
{
    const ToyModel m = init_model(small_spec());
    const AttentionOutput a = attention_forward(gaussian({1, 8}, 1), m.blocks[0]);
    EXPECT_EQ(a.softmax.shape(), (Shape{2, 1, 1}));
    EXPECT_DOUBLE_EQ(a.softmax[0], 1.0);
    EXPECT_DOUBLE_EQ(a.softmax[1], 1.0);
}

TEST(Attention, IdenticalTokensAttendUniformly)
{
    const ToyModel m = init_model(small_spec());
    Tensor x({4, 8});
    const Tensor row = gaussian({8}, 2);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 8; ++c)
            x(i, c) = row[c];
    const AttentionOutput a = attention_forward(x, m.blocks[0]);
    for (double p : a.softmax.values())
        EXPECT_NEAR(p, 0.25, 1e-15);
}

TEST(Attention, RowsSumToOneAndMatchOracle)
{
    const ToyModel m = init_model(small_spec(7));
    const Tensor x = gaussian({5, 8}, 4);
    const AttentionOutput a = attention_forward(x, m.blocks[1]);
    for (std::size_t r = 0; r < a.softmax.rows(); ++r) {
        double total = 0.0;
        for (double p : a.softmax.row(r)) {
            EXPECT_GT(p, 0.0);
            EXPECT_LE(p, 1.0);
            total += p;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
    const Tensor ref = naive_attention(x, m.blocks[1]);
    for (std::size_t i = 0; i < ref.size(); ++i)
        EXPECT_NEAR(a.output[i], ref[i], 1e-10);
}

TEST(Block, IdentityHooksMatchPlainForward)
{
    const ToyModel m = init_model(small_spec());
    const Tensor x = gaussian({3, 5, 8}, 5);
    int calls = 0;
    const Hook id = [&](const HookContext&, Tensor t) {
        ++calls;
        return t;
    };
    EXPECT_EQ(model_forward(x, m, id), model_forward(x, m));
    EXPECT_EQ(calls, 3 * 2 * 8);
}

TEST(Block, HighBitFakeQuantIsClose)
{
    const ToyModel m = init_model(small_spec());
    const Tensor x = gaussian({2, 5, 8}, 6);
    const Hook fq = [](const HookContext&, Tensor t) {
        CalibRange r = calibrate_minmax(t, Granularity::layer);
        r.lower[0] = std::min(r.lower[0], 0.0);
        const auto p = params_from_range(widen_degenerate(r), 16);
        return uniform_fake_quant(t, p);
    };
    const Tensor y = model_forward(x, m), yq = model_forward(x, m, fq);
    const double rel = std::sqrt(squared_distance(y, yq) / squared_distance(y, Tensor(y.shape())));
    EXPECT_LT(rel, 1e-3);
}

TEST(Block, ZeroedProjectionsGiveIdentity)
{
    TransformerBlock b = init_model(small_spec()).blocks[0];
    for (LinearLayerParams* p : {&b.wq, &b.wk, &b.wv, &b.wo, &b.mlp_up, &b.mlp_down}) {
        p->weight = Tensor(p->weight.shape());
        std::fill(p->bias.begin(), p->bias.end(), 0.0);
    }
    std::fill(b.ln1.beta.begin(), b.ln1.beta.end(), 0.0);
    std::fill(b.ln2.beta.begin(), b.ln2.beta.end(), 0.0);
    const Tensor x = gaussian({5, 8}, 8);
    EXPECT_EQ(block_forward(x, b), x);
}

TEST(Block, HookSeesEverySiteInOrder)
{
    const ToyModel m = init_model(small_spec());
    std::vector<Site> seen;
    const Hook rec = [&](const HookContext& ctx, Tensor t) {
        if (ctx.block == 0)
            seen.push_back(ctx.site);
        return t;
    };
    model_forward(gaussian({5, 8}, 9), m, rec);
    EXPECT_EQ(seen, (std::vector<Site>(std::begin(kAllSites), std::end(kAllSites))));
}

TEST(Model, InitIsDeterministic)
{
    const ToyModel a = init_model(small_spec(3));
    const ToyModel b = init_model(small_spec(3));
    EXPECT_EQ(a.blocks[1].mlp_down.weight, b.blocks[1].mlp_down.weight);
    EXPECT_EQ(a.blocks[0].ln1.gamma, b.blocks[0].ln1.gamma);
    EXPECT_NE(init_model(small_spec(4)).blocks[0].wq.weight, a.blocks[0].wq.weight);
    for (double g : a.blocks[0].ln1.gamma) {
        EXPECT_GE(g, 0.1);
        EXPECT_LE(g, 3.3);
    }
}

TEST(Model, ValidationCatchesBadShapes)
{
    ToyModel m = init_model(small_spec());
    m.blocks[0].heads = 3;
    EXPECT_THROW(m.validate(), ContractError);
    m = init_model(small_spec());
    m.blocks[1].wo.weight = Tensor({8, 7});
    EXPECT_THROW(m.validate(), DimensionError);
    EXPECT_THROW(block_forward(Tensor({5, 7}), init_model(small_spec()).blocks[0]), DimensionError);
    ModelSpec bad = small_spec();
    bad.heads = 3;
    EXPECT_THROW(init_model(bad), ContractError);
}

TEST(Sites, NamesRoundTrip)
{
    for (Site s : kAllSites)
        EXPECT_EQ(site_from_name(site_name(s)), s);
    EXPECT_THROW(site_from_name("nope"), FormatError);
}

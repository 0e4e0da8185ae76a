#include "ptqkit/error.hpp"
#include "ptqkit/gptq.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ptqkit;

namespace {

Tensor gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& gen)
{
    std::normal_distribution<double> n;
    Tensor x({rows, cols});
    for (auto& v : x.data())
        v = n(gen);
    return x;
}

}  // namespace

TEST(Hessian, OneHotRow)
{
    HessianAccumulator acc(3);
    acc.accumulate(Tensor::matrix({{0, 1, 0}}));
    const Tensor& h = acc.hessian();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            EXPECT_EQ(h(i, j), i == 1 && j == 1 ? 2.0 : 0.0);
    EXPECT_EQ(acc.sample_count(), 1u);
}

TEST(Hessian, MatchesOuterProductSumAndIsAdditive)
{
    std::mt19937_64 gen(1);
    const Tensor a = gaussian(7, 5, gen), b = gaussian(4, 5, gen);
    HessianAccumulator split = accumulate_hessian(accumulate_hessian(HessianAccumulator(5), a), b);
    Tensor both({11, 5});
    std::copy(a.values().begin(), a.values().end(), both.data().begin());
    std::copy(b.values().begin(), b.values().end(), both.data().begin() + 35);
    HessianAccumulator joint(5);
    joint.accumulate(both);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
            double ref = 0.0;
            for (std::size_t r = 0; r < 11; ++r)
                ref += 2.0 * both(r, i) * both(r, j);
            EXPECT_NEAR(split.hessian()(i, j), ref, 1e-10);
            EXPECT_NEAR(joint.hessian()(i, j), ref, 1e-10);
            EXPECT_EQ(split.hessian()(i, j), split.hessian()(j, i));
        }
    }
    EXPECT_EQ(split.sample_count(), 11u);
    EXPECT_THROW(split.accumulate(Tensor({2, 4})), DimensionError);
}

TEST(Cholesky, InverseOfSpd)
{
    std::mt19937_64 gen(2);
    const Tensor a = gaussian(20, 6, gen);
    Tensor h = matmul(transpose(a), a);
    Tensor inv;
    ASSERT_TRUE(spd_inverse(h, inv));
    const Tensor eye = matmul(h, inv);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            EXPECT_NEAR(eye(i, j), i == j ? 1.0 : 0.0, 1e-10);
    Tensor l;
    EXPECT_FALSE(cholesky_lower(Tensor::matrix({{1, 2}, {2, 1}}), l));
}

TEST(Gptq, RankOneHandExample)
{
    // W = [0.33; 0.135], x = (1, 1), so H = [[2, 2], [2, 2]] and the damped
    // inverse moves 2 / 2.02 of the first row's error onto the second.
    const Tensor w = Tensor::matrix({{0.33}, {0.135}});
    HessianAccumulator acc(2);
    acc.accumulate(Tensor::matrix({{1.0, 1.0}}));
    const UniformQuantParams wq{{0.1}, {8.0}, 4, Granularity::channel};
    const WeightQuantResult g = gptq_quantize_layer(w, acc, wq);
    const double w2 = 0.135 + (0.33 - 0.3) * 2.0 / 2.02;
    EXPECT_EQ(g.codes[0], 11.0);
    EXPECT_EQ(g.codes[1], std::nearbyint(w2 / 0.1 + 8.0));
    EXPECT_EQ(g.codes[1], 10.0);
    const WeightQuantResult r = rtn_quantize_layer(w, wq);
    EXPECT_EQ(r.codes[1], 9.0);
    EXPECT_LT(proxy_loss(w, g.dequant_weight, acc.hessian()), proxy_loss(w, r.dequant_weight, acc.hessian()));
}

TEST(Gptq, IdentityHessianEqualsRtn)
{
    std::mt19937_64 gen(3);
    const Tensor w = gaussian(40, 6, gen);
    HessianAccumulator acc(40);
    Tensor eye = Tensor::identity(40);
    acc.accumulate(scale(eye, 3.0));
    const UniformQuantParams wq = weight_quant_params(w, 4);
    const WeightQuantResult g = gptq_quantize_layer(w, acc, wq);
    const WeightQuantResult r = rtn_quantize_layer(w, wq);
    EXPECT_EQ(g.codes, r.codes);
    EXPECT_EQ(g.dequant_weight, r.dequant_weight);
}

TEST(Gptq, BeatsRtnOnCorrelatedInputs)
{
    std::mt19937_64 gen(4);
    int wins = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor w = gaussian(16, 8, gen);
        Tensor x = gaussian(64, 16, gen);
        const Tensor mix = gaussian(16, 16, gen);
        x = matmul(x, mix);
        HessianAccumulator acc(16);
        acc.accumulate(x);
        const UniformQuantParams wq = weight_quant_params(w, 3);
        const double lg = proxy_loss(w, gptq_quantize_layer(w, acc, wq).dequant_weight, acc.hessian());
        const double lr = proxy_loss(w, rtn_quantize_layer(w, wq).dequant_weight, acc.hessian());
        wins += lg <= lr;
    }
    EXPECT_GE(wins, 19);
}

TEST(Gptq, OutputsLieOnGrid)
{
    std::mt19937_64 gen(5);
    const Tensor w = gaussian(70, 5, gen);
    HessianAccumulator acc(70);
    acc.accumulate(gaussian(100, 70, gen));
    const UniformQuantParams wq = weight_quant_params(w, 4);
    const WeightQuantResult g = gptq_quantize_layer(w, acc, wq);
    EXPECT_FALSE(g.cholesky_fallback);
    EXPECT_EQ(g.dequant_weight, uniform_dequant(g.codes, wq));
}

TEST(Gptq, FallsBackToRtnOnFactorizationFailure)
{
    const Tensor w = Tensor::matrix({{0.1, 0.2}, {0.3, -0.4}});
    HessianAccumulator acc(2);
    acc.accumulate(Tensor::matrix({{NAN, 1.0}}));
    const UniformQuantParams wq = weight_quant_params(w, 4);
    const WeightQuantResult g = gptq_quantize_layer(w, acc, wq);
    EXPECT_TRUE(g.cholesky_fallback);
    EXPECT_EQ(g.codes, rtn_quantize_layer(w, wq).codes);
}

TEST(Gptq, DeadInputsAreHandled)
{
    std::mt19937_64 gen(6);
    const Tensor w = gaussian(4, 3, gen);
    HessianAccumulator acc(4);
    acc.accumulate(Tensor::matrix({{1.0, 0.0, 2.0, 0.0}, {0.5, 0.0, -1.0, 0.0}}));
    const WeightQuantResult g = gptq_quantize_layer(w, acc, weight_quant_params(w, 4));
    EXPECT_FALSE(g.cholesky_fallback);
    EXPECT_TRUE(g.dequant_weight.all_finite());
}

TEST(Gptq, RejectsMismatchedHessian)
{
    const Tensor w({3, 2}, 0.5);
    HessianAccumulator acc(4);
    acc.accumulate(Tensor({1, 4}, 1.0));
    EXPECT_THROW(gptq_quantize_layer(w, acc, UniformQuantParams{{0.1, 0.1}, {0.0, 0.0}, 4, Granularity::channel}),
                 ContractError);
    EXPECT_THROW(gptq_quantize_layer(w, HessianAccumulator(3), UniformQuantParams{{0.1}, {0.0}, 4, Granularity::layer}),
                 ContractError);
}

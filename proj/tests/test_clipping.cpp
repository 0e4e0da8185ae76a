#include "ptqkit/clipping.hpp"
#include "ptqkit/error.hpp"
#include "ptqkit/synthdata.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ptqkit;

namespace {

double sig(double a)
{
    return 1.0 / (1.0 + std::exp(-a));
}

// Independent recompute of the clipping loss, column by column.
double naive_loss(const Tensor& x, const std::vector<double>& a1, const std::vector<double>& a2, int bits)
{
    const double top = std::pow(2.0, bits) - 1.0;
    double loss = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
        double mx = -INFINITY, mn = INFINITY;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            mx = std::max(mx, x(r, c));
            mn = std::min(mn, x(r, c));
        }
        const double up = mx * sig(a1[c]), lo = mn * sig(a2[c]);
        const double s = (up - lo) / top;
        const double z = std::min(std::max(-lo / s, 0.0), top);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const double q = std::min(std::max(std::nearbyint(x(r, c) / s + z), 0.0), top);
            const double e = x(r, c) - s * (q - z);
            loss += e * e;
        }
    }
    return loss;
}

Tensor gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0)
{
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> n(0.0, scale);
    Tensor x({rows, cols});
    for (auto& v : x.data())
        v = n(gen);
    return x;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate)
{
    Adam adam(2, AdamConfig{0.1, 0.9, 0.999, 1e-8});
    std::vector<double> p{1.0, -2.0};
    adam.step(p, std::vector<double>{4.0, -0.5});
    EXPECT_NEAR(p[0], 0.9, 1e-8);
    EXPECT_NEAR(p[1], -1.9, 1e-8);
    EXPECT_EQ(adam.state().step, 1u);
    EXPECT_NEAR(adam.state().m[0], 0.4, 1e-15);
    EXPECT_NEAR(adam.state().v[0], 0.016, 1e-15);
}

TEST(Adam, MinimizesQuadratic)
{
    Adam adam(1, AdamConfig{0.05, 0.9, 0.999, 1e-8});
    std::vector<double> p{3.0};
    for (int i = 0; i < 2000; ++i)
        adam.step(p, std::vector<double>{2.0 * (p[0] - 1.0)});
    EXPECT_NEAR(p[0], 1.0, 1e-2);
}

TEST(ClippedBounds, Formula)
{
    const Tensor x = Tensor::matrix({{10.0, -1.0}, {-4.0, 3.0}});
    const CalibRange b = clipped_bounds(x, ClipFactors{{0.0, 1.0}, {2.0, 0.0}});
    EXPECT_DOUBLE_EQ(b.upper[0], 5.0);
    EXPECT_DOUBLE_EQ(b.lower[0], -4.0 * sig(2.0));
    EXPECT_DOUBLE_EQ(b.upper[1], 3.0 * sig(1.0));
    EXPECT_DOUBLE_EQ(b.lower[1], -0.5);
}

TEST(ClippedBounds, LargeLogitsGiveRawRange)
{
    const Tensor x = gaussian(50, 3, 1);
    const CalibRange b = clipped_bounds(x, ClipFactors::constant(3, 60.0));
    const CalibRange m = calibrate_minmax(x, Granularity::channel);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_DOUBLE_EQ(b.upper[c], m.upper[c]);
        EXPECT_DOUBLE_EQ(b.lower[c], m.lower[c]);
    }
}

TEST(ClippedBounds, InfeasibleThrows)
{
    // positive channel: upper contracts below lower
    const Tensor x = Tensor::matrix({{1.0}, {1.1}});
    EXPECT_THROW(clipped_bounds(x, ClipFactors{{-5.0}, {5.0}}), ContractError);
}

TEST(ClipLoss, MatchesNaiveRecompute)
{
    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> u(-1.0, 5.0);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = gaussian(80, 4, 100 + trial, 2.0);
        std::vector<double> a1(4), a2(4);
        for (std::size_t c = 0; c < 4; ++c) {
            a1[c] = u(gen);
            a2[c] = u(gen);
        }
        const double got = clip_loss(x, ClipFactors{a1, a2}, 4);
        const double want = naive_loss(x, a1, a2, 4);
        EXPECT_NEAR(got, want, 1e-12 * want);
    }
}

TEST(ClipLoss, OnGridDataIsZero)
{
    // Values exactly on a 2-bit grid spanning [-1, 2].
    const Tensor x = Tensor::matrix({{-1.0}, {0.0}, {1.0}, {2.0}});
    EXPECT_NEAR(clip_loss(x, ClipFactors::constant(1, 40.0), 2), 0.0, 1e-20);
}

TEST(ClipLoss, OutlierPrefersSomeClipping)
{
    Tensor x = gaussian(400, 1, 5);
    x(0, 0) = 40.0;
    const double unclipped = clip_loss(x, ClipFactors::constant(1, 40.0), 4);
    double best = unclipped;
    for (int i = 0; i < 16; ++i) {
        const double a1 = -3.0 + 0.5 * i;
        best = std::min(best, clip_loss(x, ClipFactors{{a1}, {40.0}}, 4));
    }
    EXPECT_LT(best, unclipped);
}

TEST(ClipGrad, MatchesFiniteDifferences)
{
    const Tensor x = gaussian(60, 3, 7, 1.5);
    const ClipFactors f{{1.3, 2.1, 0.7}, {1.9, 0.4, 2.6}};
    const ClipGradient g = clip_loss_grad(x, f, 4);
    const double h = 1e-4;
    for (std::size_t c = 0; c < 3; ++c) {
        for (int which = 0; which < 2; ++which) {
            ClipFactors p = f, m = f;
            (which ? p.alpha2 : p.alpha1)[c] += h;
            (which ? m.alpha2 : m.alpha1)[c] -= h;
            const double fd = (clip_loss(x, p, 4) - clip_loss(x, m, 4)) / (2 * h);
            const double an = which ? g.alpha2[c] : g.alpha1[c];
            EXPECT_NEAR(an, fd, 1e-3 * std::abs(fd) + 1e-9) << "channel " << c << " which " << which;
        }
    }
}

TEST(ClipGrad, HomogeneousUnderRescaling)
{
    const Tensor x = gaussian(60, 2, 8);
    const ClipFactors f{{1.0, 2.0}, {1.5, 0.5}};
    const ClipGradient g1 = clip_loss_grad(x, f, 4);
    const ClipGradient g2 = clip_loss_grad(scale(x, 2.0), f, 4);
    // The loss scales by 4 when data and bounds double.
    for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_NEAR(g2.alpha1[c], 4.0 * g1.alpha1[c], 1e-9 * std::abs(g2.alpha1[c]) + 1e-12);
        EXPECT_NEAR(g2.alpha2[c], 4.0 * g1.alpha2[c], 1e-9 * std::abs(g2.alpha2[c]) + 1e-12);
    }
}

TEST(ClipGrad, StraightThroughDiffersFromExact)
{
    const Tensor x = gaussian(60, 2, 9);
    const ClipFactors f = ClipFactors::constant(2, 1.0);
    const ClipGradient exact = clip_loss_grad(x, f, 3, GradientEstimator::piecewise_exact);
    const ClipGradient ste = clip_loss_grad(x, f, 3, GradientEstimator::straight_through);
    EXPECT_NE(exact.alpha1[0], ste.alpha1[0]);
}

TEST(ClipGrad, ConstantChannelHasZeroGradient)
{
    Tensor x = gaussian(30, 2, 10);
    for (std::size_t r = 0; r < 30; ++r)
        x(r, 1) = 0.7;
    const ClipGradient g = clip_loss_grad(x, ClipFactors::constant(2, 4.0), 4);
    EXPECT_EQ(g.alpha1[1], 0.0);
    EXPECT_EQ(g.alpha2[1], 0.0);
    EXPECT_TRUE(std::isfinite(clip_loss(x, ClipFactors::constant(2, 4.0), 4)));
}

TEST(OptimizeClip, BestIterateAndMonotoneReport)
{
    SynthSpec spec;
    spec.channels = 8;
    spec.tokens = 16;
    spec.samples = 16;
    spec.seed = 3;
    const Tensor x = gen_interchannel(spec);
    const ClipResult r = optimize_clip(x, 4);
    EXPECT_EQ(r.history.size(), 101u);
    EXPECT_LE(r.best_loss, r.initial_loss);
    EXPECT_EQ(r.best_loss, *std::min_element(r.history.begin(), r.history.end()));
    EXPECT_EQ(r.history[r.best_iteration], r.best_loss);
    EXPECT_NEAR(bounds_loss(x, r.bounds, 4), r.best_loss, 1e-9 * r.best_loss);
    EXPECT_NEAR(r.initial_loss, clip_loss(x, ClipFactors::constant(8, 4.0), 4), 1e-9 * r.initial_loss);
}

TEST(OptimizeClip, BeatsMinMaxOnHeavyTails)
{
    SynthSpec spec;
    spec.channels = 16;
    spec.tokens = 32;
    spec.samples = 64;
    spec.seed = 11;
    const Tensor x = gen_interchannel(spec);
    const double minmax = bounds_loss(x, calibrate_minmax(x.reshaped({x.rows(), x.cols()}), Granularity::channel), 4);
    EXPECT_LT(optimize_clip(x, 4).best_loss, minmax);
}

static Tensor uniform_box(std::size_t rows, std::size_t cols, std::uint64_t seed)
{
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor x({rows, cols});
    for (auto& v : x.data())
        v = u(gen);
    return x;
}

// Expected per-element loss for U(-1, 1) data clipped symmetrically at c with
// L = 2^b - 1 steps: in-range rounding noise c^3 / (3 L^2) plus the clipped
// tails (1 - c)^3 / 3.
static double uniform_box_loss(double c, int bits)
{
    const double l = std::ldexp(1.0, bits) - 1.0;
    return c * c * c / (3 * l * l) + (1 - c) * (1 - c) * (1 - c) / 3;
}

TEST(OptimizeClip, LittleGainWithoutOutliers)
{
    const Tensor x = uniform_box(2000, 3, 4);
    const ClipResult r = optimize_clip(x, 6);
    EXPECT_LE(r.best_loss, r.initial_loss);
    EXPECT_GE(r.best_loss, 0.95 * r.initial_loss);
}

TEST(OptimizeClip, UniformBoxReachesAnalyticOptimum)
{
    // The optimum satisfies (1 - c) = c / L. At 4 bits it sits at c = 15/16
    // and is about 7% below the loss at the default starting contraction.
    const Tensor x = uniform_box(2000, 3, 4);
    const double n = static_cast<double>(x.size());
    const ClipResult r = optimize_clip(x, 4);
    const double c_opt = 15.0 / 16.0;
    EXPECT_NEAR(r.best_loss / n, uniform_box_loss(c_opt, 4), 0.03 * uniform_box_loss(c_opt, 4));
    EXPECT_NEAR(r.initial_loss / n, uniform_box_loss(sigmoid(4.0), 4), 0.03 * uniform_box_loss(sigmoid(4.0), 4));
}

TEST(OptimizeClip, FlagsPositiveMinimaAndConstantChannels)
{
    Tensor x = gaussian(100, 3, 12);
    for (std::size_t r = 0; r < 100; ++r) {
        x(r, 1) = 2.0 + std::abs(x(r, 1));
        x(r, 2) = -1.0;
    }
    const ClipResult r = optimize_clip(x, 4, ClipOptions{10});
    EXPECT_EQ(r.positive_min_channels, std::vector<std::size_t>{1});
    EXPECT_EQ(r.degenerate_channels, std::vector<std::size_t>{2});
    EXPECT_GT(r.bounds.upper[2], r.bounds.lower[2]);
}

TEST(OptimizeDirect, SameStartingPoint)
{
    const Tensor x = gaussian(200, 4, 13);
    const ClipResult a = optimize_clip(x, 4);
    const ClipResult b = optimize_bounds_direct(x, 4);
    EXPECT_NEAR(a.initial_loss, b.initial_loss, 1e-9 * a.initial_loss);
    EXPECT_LE(b.best_loss, b.initial_loss);
}

namespace {

// Per-channel exhaustive search over a 16 x 16 grid of upper/lower
// contraction factors in [0.5, 1]; the loss separates across channels.
double grid_search_loss(const Tensor& x, int bits)
{
    double total = 0.0;
    const CalibRange mm = calibrate_minmax(x, Granularity::channel);
    for (std::size_t c = 0; c < x.cols(); ++c) {
        Tensor col({x.rows(), 1});
        for (std::size_t r = 0; r < x.rows(); ++r)
            col(r, 0) = x(r, c);
        double best = INFINITY;
        for (int i = 0; i < 16; ++i) {
            for (int j = 0; j < 16; ++j) {
                CalibRange b;
                b.granularity = Granularity::channel;
                b.upper = {mm.upper[c] * (0.5 + i / 30.0)};
                b.lower = {mm.lower[c] * (0.5 + j / 30.0)};
                best = std::min(best, bounds_loss(col, b, bits));
            }
        }
        total += best;
    }
    return total;
}

}  // namespace

TEST(OptimizeClip, ComparableToGridSearch)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SynthSpec spec;
        spec.channels = 8;
        spec.tokens = 16;
        spec.samples = 16;
        spec.mean_offset = 0.0;
        spec.seed = 40 + seed;
        const Tensor x4 = gen_interchannel(spec);
        const Tensor x = x4.reshaped({x4.rows(), x4.cols()});
        const double grid = grid_search_loss(x, 4);
        const double adam = optimize_clip(x, 4, {100, 0.01, 2.0}).best_loss;
        EXPECT_LE(adam, 1.03 * grid) << "seed " << seed;
        EXPECT_LT(grid, bounds_loss(x, calibrate_minmax(x, Granularity::channel), 4));
    }
}

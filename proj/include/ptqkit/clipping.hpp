#pragma once

#include "ptqkit/quantizers.hpp"
#include "ptqkit/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace ptqkit {

/// Pre-sigmoid contraction logits for the per-channel upper (alpha1) and
/// lower (alpha2) bounds.
struct ClipFactors {
    std::vector<double> alpha1;
    std::vector<double> alpha2;

    static ClipFactors constant(std::size_t channels, double value);
    std::size_t channels() const noexcept { return alpha1.size(); }
};

double sigmoid(double x) noexcept;

struct AdamConfig {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
    AdamConfig config;
};

/// Plain bias-corrected Adam over a flat parameter vector.
class Adam {
public:
    Adam(std::size_t parameters, AdamConfig config);

    /// Applies one update in place.
    void step(std::span<double> params, std::span<const double> grad);
    const AdamState& state() const noexcept { return state_; }

private:
    AdamState state_;
};

/// upper = channel max * sigmoid(alpha1), lower = channel min * sigmoid(alpha2).
/// Throws ContractError when a channel ends up with upper <= lower.
CalibRange clipped_bounds(const Tensor& samples, const ClipFactors& f);

/// Squared Frobenius reconstruction error of the channel-wise quantizer built
/// from `bounds` with its zero point kept continuous:
///   x^ = s * clip(round((x - lower) / s), 0, 2^b - 1) + lower.
double bounds_loss(const Tensor& samples, const CalibRange& bounds, int bits);

/// bounds_loss() at clipped_bounds(samples, f).
double clip_loss(const Tensor& samples, const ClipFactors& f, int bits);

/// How the rounding step is differentiated.
///   piecewise_exact: the rounded code is held at its current value, which is
///     the true derivative of the (continuous, piecewise-smooth) loss away
///     from rounding ties, so it agrees with finite differences.
///   straight_through: d round(t)/dt := 1 inside the clip range.
enum class GradientEstimator { piecewise_exact, straight_through };

struct BoundsGradient {
    std::vector<double> upper;
    std::vector<double> lower;
};

/// Gradient of bounds_loss() with respect to the per-channel bounds.
BoundsGradient bounds_loss_grad(const Tensor& samples, const CalibRange& bounds, int bits,
                                GradientEstimator estimator = GradientEstimator::piecewise_exact);

struct ClipGradient {
    std::vector<double> alpha1;
    std::vector<double> alpha2;
};

ClipGradient clip_loss_grad(const Tensor& samples, const ClipFactors& f, int bits,
                            GradientEstimator estimator = GradientEstimator::piecewise_exact);

struct ClipOptions {
    int iters = 100;
    double lr = 0.01;
    double init = 4.0;
    GradientEstimator estimator = GradientEstimator::piecewise_exact;
};

struct ClipResult {
    ClipFactors factors;
    CalibRange bounds;
    double initial_loss = 0.0;
    double best_loss = 0.0;
    std::size_t best_iteration = 0;
    /// Loss before each update; the last entry is the final iterate.
    std::vector<double> history;
    /// Channels whose minimum is positive, so the lower contraction widens the range.
    std::vector<std::size_t> positive_min_channels;
    /// Constant channels left at their widened min/max range.
    std::vector<std::size_t> degenerate_channels;
};

/// Learns per-channel dual clipping factors with full-batch Adam and returns
/// the best iterate seen. `samples` is [rows x D] (leading axes flattened).
ClipResult optimize_clip(const Tensor& samples, int bits, const ClipOptions& options = {});

/// Baseline that optimizes the raw bound values with the same Adam settings,
/// starting from the same initial bounds as optimize_clip().
ClipResult optimize_bounds_direct(const Tensor& samples, int bits, const ClipOptions& options = {});

}  // namespace ptqkit

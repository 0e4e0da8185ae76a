#include "ptqkit/clipping.hpp"

#include "ptqkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ptqkit {

namespace {

struct ChannelTerms {
    std::vector<double> loss;
    std::vector<double> grad_upper;
    std::vector<double> grad_lower;
};

void check_bounds(const CalibRange& bounds, std::size_t cols)
{
    if (bounds.channels() != cols)
        throw DimensionError("clipping: bounds have " + std::to_string(bounds.channels()) +
                             " channels, samples have " + std::to_string(cols));
    for (std::size_t c = 0; c < cols; ++c) {
        if (!(bounds.upper[c] > bounds.lower[c]))
            throw ContractError("clipping: infeasible bounds on channel " + std::to_string(c));
    }
}

// Per-channel loss and, optionally, its gradient with respect to the bounds.
//
// Quantizer per channel: s = (u - l) / L, z = clamp(-l / s, 0, L),
// q = clip(round(x / s + z), 0, L), x^ = s (q - z).
ChannelTerms channel_terms(const Tensor& samples, const CalibRange& bounds, int bits, bool want_grad,
                           GradientEstimator estimator)
{
    const std::size_t cols = samples.cols();
    check_bounds(bounds, cols);
    const double top = max_code(bits);

    std::vector<double> s(cols), z(cols);
    std::vector<bool> z_free(cols);
    for (std::size_t c = 0; c < cols; ++c) {
        s[c] = (bounds.upper[c] - bounds.lower[c]) / top;
        const double zc = -bounds.lower[c] / s[c];
        z[c] = std::clamp(zc, 0.0, top);
        z_free[c] = zc > 0.0 && zc < top;
    }

    ChannelTerms out;
    out.loss.assign(cols, 0.0);
    std::vector<double> g_s(cols, 0.0), g_z(cols, 0.0);
    const bool ste = estimator == GradientEstimator::straight_through;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::size_t c = i % cols;
        const double x = samples[i];
        const double t = x / s[c] + z[c];
        const double r = round_half_to_even(t);
        const double q = std::clamp(r, 0.0, top);
        const double xhat = s[c] * (q - z[c]);
        const double e = x - xhat;
        out.loss[c] += e * e;
        if (!want_grad)
            continue;
        const double dxhat = -2.0 * e;
        if (ste && r >= 0.0 && r <= top) {
            g_s[c] += dxhat * (q - t);
        } else {
            g_s[c] += dxhat * (q - z[c]);
            g_z[c] += dxhat * -s[c];
        }
    }
    if (!want_grad)
        return out;

    out.grad_upper.resize(cols);
    out.grad_lower.resize(cols);
    for (std::size_t c = 0; c < cols; ++c) {
        const double l = bounds.lower[c];
        // z = -l / s when unclamped: dz/ds = l / s^2, dz/dl = -1 / s (s held).
        const double dz_ds = z_free[c] ? l / (s[c] * s[c]) : 0.0;
        const double dz_dl = z_free[c] ? -1.0 / s[c] : 0.0;
        const double total_s = g_s[c] + g_z[c] * dz_ds;
        out.grad_upper[c] = total_s / top;
        out.grad_lower[c] = g_z[c] * dz_dl - total_s / top;
    }
    return out;
}

struct RawRange {
    std::vector<double> max, min;
    std::vector<bool> active;
};

RawRange raw_range(const Tensor& samples)
{
    const CalibRange r = calibrate_minmax(samples, Granularity::channel);
    RawRange raw{r.upper, r.lower, std::vector<bool>(r.channels())};
    for (std::size_t c = 0; c < r.channels(); ++c)
        raw.active[c] = r.upper[c] > r.lower[c];
    return raw;
}

CalibRange sigmoid_bounds(const RawRange& raw, std::span<const double> a1, std::span<const double> a2)
{
    const std::size_t d = raw.max.size();
    CalibRange b{std::vector<double>(d), std::vector<double>(d), Granularity::channel};
    for (std::size_t c = 0; c < d; ++c) {
        if (raw.active[c]) {
            b.upper[c] = raw.max[c] * sigmoid(a1[c]);
            b.lower[c] = raw.min[c] * sigmoid(a2[c]);
        } else {
            b.upper[c] = raw.max[c];
            b.lower[c] = raw.min[c];
        }
    }
    return widen_degenerate(std::move(b));
}

double total(const std::vector<double>& v)
{
    return std::accumulate(v.begin(), v.end(), 0.0);
}

// Shared Adam loop over a 2*D parameter vector [upper-ish; lower-ish].
// `bounds_of` maps parameters to bounds, `grad_of` maps bound gradients to
// parameter gradients. Channels whose update would make them infeasible keep
// their previous parameters.
template <typename BoundsOf, typename GradOf>
ClipResult adam_loop(const Tensor& samples, int bits, const ClipOptions& options, const RawRange& raw,
                     std::vector<double> params, BoundsOf bounds_of, GradOf grad_of)
{
    const std::size_t d = raw.max.size();
    Adam adam(params.size(), AdamConfig{options.lr, 0.9, 0.999, 1e-8});
    ClipResult result;
    result.best_loss = std::numeric_limits<double>::infinity();
    std::vector<double> best = params;

    for (int k = 0;; ++k) {
        const CalibRange bounds = bounds_of(params);
        const bool last = k >= options.iters;
        ChannelTerms terms = channel_terms(samples, bounds, bits, !last, options.estimator);
        const double loss = total(terms.loss);
        result.history.push_back(loss);
        if (k == 0)
            result.initial_loss = loss;
        if (loss < result.best_loss) {
            result.best_loss = loss;
            result.best_iteration = static_cast<std::size_t>(k);
            best = params;
        }
        if (last)
            break;

        std::vector<double> grad = grad_of(terms, params);
        for (std::size_t c = 0; c < d; ++c) {
            if (!raw.active[c]) {
                grad[c] = 0.0;
                grad[d + c] = 0.0;
            }
        }
        const std::vector<double> previous = params;
        adam.step(params, grad);
        const CalibRange next = bounds_of(params);
        for (std::size_t c = 0; c < d; ++c) {
            if (!(next.upper[c] > next.lower[c]) || !std::isfinite(next.upper[c] - next.lower[c])) {
                params[c] = previous[c];
                params[d + c] = previous[d + c];
            }
        }
    }

    result.bounds = bounds_of(best);
    for (std::size_t c = 0; c < d; ++c) {
        if (!raw.active[c])
            result.degenerate_channels.push_back(c);
        else if (raw.min[c] > 0.0)
            result.positive_min_channels.push_back(c);
    }
    result.factors.alpha1.assign(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(d));
    result.factors.alpha2.assign(best.begin() + static_cast<std::ptrdiff_t>(d), best.end());
    return result;
}

Tensor as_matrix(const Tensor& samples)
{
    if (samples.empty())
        throw CalibrationError("clipping: empty sample set");
    return samples.rank() == 2 ? samples : samples.reshaped({samples.rows(), samples.cols()});
}

}  // namespace

ClipFactors ClipFactors::constant(std::size_t channels, double value)
{
    return ClipFactors{std::vector<double>(channels, value), std::vector<double>(channels, value)};
}

double sigmoid(double x) noexcept
{
    return 1.0 / (1.0 + std::exp(-x));
}

Adam::Adam(std::size_t parameters, AdamConfig config)
{
    state_.m.assign(parameters, 0.0);
    state_.v.assign(parameters, 0.0);
    state_.config = config;
}

void Adam::step(std::span<double> params, std::span<const double> grad)
{
    if (params.size() != state_.m.size() || grad.size() != state_.m.size())
        throw DimensionError("Adam::step: parameter count mismatch");
    const auto& cfg = state_.config;
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        state_.m[i] = cfg.beta1 * state_.m[i] + (1.0 - cfg.beta1) * grad[i];
        state_.v[i] = cfg.beta2 * state_.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mhat = state_.m[i] / bc1;
        const double vhat = state_.v[i] / bc2;
        params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}

CalibRange clipped_bounds(const Tensor& samples, const ClipFactors& f)
{
    const Tensor x = as_matrix(samples);
    const CalibRange raw = calibrate_minmax(x, Granularity::channel);
    if (f.alpha1.size() != raw.channels() || f.alpha2.size() != raw.channels())
        throw DimensionError("clipped_bounds: factor length does not match channel count");
    CalibRange b{std::vector<double>(raw.channels()), std::vector<double>(raw.channels()), Granularity::channel};
    for (std::size_t c = 0; c < raw.channels(); ++c) {
        b.upper[c] = raw.upper[c] * sigmoid(f.alpha1[c]);
        b.lower[c] = raw.lower[c] * sigmoid(f.alpha2[c]);
        if (!(b.upper[c] > b.lower[c]))
            throw ContractError("clipped_bounds: infeasible clip on channel " + std::to_string(c));
    }
    return b;
}

double bounds_loss(const Tensor& samples, const CalibRange& bounds, int bits)
{
    return total(channel_terms(as_matrix(samples), bounds, bits, false, GradientEstimator::piecewise_exact).loss);
}

double clip_loss(const Tensor& samples, const ClipFactors& f, int bits)
{
    const Tensor x = as_matrix(samples);
    const RawRange raw = raw_range(x);
    if (f.alpha1.size() != raw.max.size() || f.alpha2.size() != raw.max.size())
        throw DimensionError("clip_loss: factor length does not match channel count");
    return bounds_loss(x, sigmoid_bounds(raw, f.alpha1, f.alpha2), bits);
}

BoundsGradient bounds_loss_grad(const Tensor& samples, const CalibRange& bounds, int bits, GradientEstimator estimator)
{
    ChannelTerms t = channel_terms(as_matrix(samples), bounds, bits, true, estimator);
    return BoundsGradient{std::move(t.grad_upper), std::move(t.grad_lower)};
}

ClipGradient clip_loss_grad(const Tensor& samples, const ClipFactors& f, int bits, GradientEstimator estimator)
{
    const Tensor x = as_matrix(samples);
    const RawRange raw = raw_range(x);
    const std::size_t d = raw.max.size();
    if (f.alpha1.size() != d || f.alpha2.size() != d)
        throw DimensionError("clip_loss_grad: factor length does not match channel count");
    const BoundsGradient g = bounds_loss_grad(x, sigmoid_bounds(raw, f.alpha1, f.alpha2), bits, estimator);
    ClipGradient out{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (std::size_t c = 0; c < d; ++c) {
        if (!raw.active[c])
            continue;
        const double s1 = sigmoid(f.alpha1[c]), s2 = sigmoid(f.alpha2[c]);
        out.alpha1[c] = g.upper[c] * raw.max[c] * s1 * (1.0 - s1);
        out.alpha2[c] = g.lower[c] * raw.min[c] * s2 * (1.0 - s2);
    }
    return out;
}

ClipResult optimize_clip(const Tensor& samples, int bits, const ClipOptions& options)
{
    const Tensor x = as_matrix(samples);
    const RawRange raw = raw_range(x);
    const std::size_t d = raw.max.size();
    auto bounds_of = [&](const std::vector<double>& p) {
        return sigmoid_bounds(raw, std::span(p).first(d), std::span(p).subspan(d));
    };
    auto grad_of = [&](const ChannelTerms& t, const std::vector<double>& p) {
        std::vector<double> g(2 * d);
        for (std::size_t c = 0; c < d; ++c) {
            const double s1 = sigmoid(p[c]), s2 = sigmoid(p[d + c]);
            g[c] = t.grad_upper[c] * raw.max[c] * s1 * (1.0 - s1);
            g[d + c] = t.grad_lower[c] * raw.min[c] * s2 * (1.0 - s2);
        }
        return g;
    };
    return adam_loop(x, bits, options, raw, std::vector<double>(2 * d, options.init), bounds_of, grad_of);
}

ClipResult optimize_bounds_direct(const Tensor& samples, int bits, const ClipOptions& options)
{
    const Tensor x = as_matrix(samples);
    const RawRange raw = raw_range(x);
    const std::size_t d = raw.max.size();
    std::vector<double> init(2 * d);
    for (std::size_t c = 0; c < d; ++c) {
        init[c] = raw.max[c] * sigmoid(options.init);
        init[d + c] = raw.min[c] * sigmoid(options.init);
    }
    auto bounds_of = [&](const std::vector<double>& p) {
        CalibRange b{std::vector<double>(d), std::vector<double>(d), Granularity::channel};
        for (std::size_t c = 0; c < d; ++c) {
            b.upper[c] = raw.active[c] ? p[c] : raw.max[c];
            b.lower[c] = raw.active[c] ? p[d + c] : raw.min[c];
        }
        return widen_degenerate(std::move(b));
    };
    auto grad_of = [&](const ChannelTerms& t, const std::vector<double>&) {
        std::vector<double> g(2 * d);
        std::copy(t.grad_upper.begin(), t.grad_upper.end(), g.begin());
        std::copy(t.grad_lower.begin(), t.grad_lower.end(), g.begin() + static_cast<std::ptrdiff_t>(d));
        return g;
    };
    ClipResult r = adam_loop(x, bits, options, raw, std::move(init), bounds_of, grad_of);
    r.factors = {};
    return r;
}

}  // namespace ptqkit

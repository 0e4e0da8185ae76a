#include "ptqkit/tensor.hpp"

#include "ptqkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

namespace ptqkit {

namespace {

std::size_t product(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const Shape& shape)
{
    for (auto d : shape) {
        if (d == 0)
            throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
}

enum class Broadcast { same, row };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape() == b.shape())
        return Broadcast::same;
    if (b.rank() == 1 && a.rank() >= 1 && b.size() == a.cols())
        return Broadcast::row;
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_to_string(b.shape()) + " against " +
                         shape_to_string(a.shape()));
}

template <typename F>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f)
{
    const auto kind = broadcast_kind(a, b, op);
    Tensor out(a.shape());
    const std::size_t n = a.size();
    const std::size_t cols = a.cols();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = f(a[i], kind == Broadcast::same ? b[i] : b[i % cols]);
    return out;
}

template <typename F>
Tensor unary(const Tensor& a, F f)
{
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = f(a[i]);
    return out;
}

// Splits `shape` around `axis` into (outer, length, inner) strides.
struct AxisLayout {
    std::size_t outer, length, inner;
    Shape reduced;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis)
{
    if (axis >= shape.size())
        throw DimensionError("reduction axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape));
    AxisLayout l{1, shape[axis], 1, {}};
    for (std::size_t i = 0; i < axis; ++i)
        l.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i)
        l.inner *= shape[i];
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != axis)
            l.reduced.push_back(shape[i]);
    }
    if (l.reduced.empty())
        l.reduced.push_back(1);
    return l;
}

template <typename Init, typename Step, typename Finish>
Tensor reduce(const Tensor& a, std::size_t axis, Init init, Step step, Finish finish)
{
    const auto l = axis_layout(a.shape(), axis);
    Tensor out(l.reduced);
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t i = 0; i < l.inner; ++i) {
            auto acc = init();
            for (std::size_t k = 0; k < l.length; ++k)
                step(acc, a[(o * l.length + k) * l.inner + i]);
            out[o * l.inner + i] = finish(acc, l.length);
        }
    }
    return out;
}

}  // namespace

std::string shape_to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape))
{
    check_shape(shape_);
    data_.assign(product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    check_shape(shape_);
    if (product(shape_) != data_.size())
        throw DimensionError("shape " + shape_to_string(shape_) + " does not match " + std::to_string(data_.size()) +
                             " elements");
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c)
            throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> values)
{
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::identity(std::size_t n)
{
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i)
        out(i, i) = 1.0;
    return out;
}

std::size_t Tensor::dim(std::size_t axis) const
{
    if (axis >= shape_.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape_));
    return shape_[axis];
}

std::size_t Tensor::rows() const noexcept
{
    return shape_.empty() ? 0 : data_.size() / shape_.back();
}

std::size_t Tensor::cols() const noexcept
{
    return shape_.empty() ? 0 : shape_.back();
}

std::span<const double> Tensor::row(std::size_t r) const
{
    return std::span<const double>(data_).subspan(r * cols(), cols());
}

std::span<double> Tensor::row(std::size_t r)
{
    return std::span<double>(data_).subspan(r * cols(), cols());
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice(std::size_t i) const
{
    if (rank() < 2 || i >= shape_[0])
        throw DimensionError("slice " + std::to_string(i) + " invalid for " + shape_to_string(shape_));
    Shape inner(shape_.begin() + 1, shape_.end());
    const std::size_t n = product(inner);
    return Tensor(std::move(inner), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(i * n),
                                                        data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                             shape_to_string(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        auto orow = out.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            if (aip == 0.0)
                continue;
            auto brow = b.row(p);
            for (std::size_t j = 0; j < n; ++j)
                orow[j] += aip * brow[j];
        }
    }
    return out;
}

Tensor transpose(const Tensor& a)
{
    if (a.rank() != 2)
        throw DimensionError("transpose expects a matrix, got " + shape_to_string(a.shape()));
    Tensor out({a.dim(1), a.dim(0)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < a.dim(1); ++j)
            out(j, i) = a(i, j);
    return out;
}

Tensor add(const Tensor& a, const Tensor& b)
{
    return binary(a, b, "add", std::plus<>());
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    return binary(a, b, "sub", std::minus<>());
}

Tensor mul(const Tensor& a, const Tensor& b)
{
    return binary(a, b, "mul", std::multiplies<>());
}

Tensor div(const Tensor& a, const Tensor& b)
{
    return binary(a, b, "div", [](double x, double y) {
        if (y == 0.0)
            throw DomainError("div: division by zero");
        return x / y;
    });
}

Tensor scale(const Tensor& a, double factor)
{
    return unary(a, [factor](double x) { return x * factor; });
}

Tensor exp(const Tensor& a)
{
    return unary(a, [](double x) {
        const double r = std::exp(x);
        if (!std::isfinite(r))
            throw DomainError("exp: overflow");
        return r;
    });
}

Tensor log2(const Tensor& a)
{
    return unary(a, [](double x) {
        if (!(x > 0.0))
            throw DomainError("log2: nonpositive input");
        return std::log2(x);
    });
}

double round_half_to_even(double x) noexcept
{
    // nearbyint honours the current rounding mode, which is ties-to-even by default.
    return std::nearbyint(x);
}

Tensor round_half_to_even(const Tensor& a)
{
    return unary(a, [](double x) { return round_half_to_even(x); });
}

Tensor clamp(const Tensor& a, double lo, double hi)
{
    if (lo > hi)
        throw ContractError("clamp: lo > hi");
    return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); });
}

Tensor reduce_min(const Tensor& a, std::size_t axis)
{
    return reduce(
        a, axis, [] { return std::numeric_limits<double>::infinity(); },
        [](double& acc, double v) { acc = std::min(acc, v); }, [](double acc, std::size_t) { return acc; });
}

Tensor reduce_max(const Tensor& a, std::size_t axis)
{
    return reduce(
        a, axis, [] { return -std::numeric_limits<double>::infinity(); },
        [](double& acc, double v) { acc = std::max(acc, v); }, [](double acc, std::size_t) { return acc; });
}

Tensor reduce_mean(const Tensor& a, std::size_t axis)
{
    return reduce(
        a, axis, [] { return 0.0; }, [](double& acc, double v) { acc += v; },
        [](double acc, std::size_t n) { return acc / static_cast<double>(n); });
}

Tensor reduce_var(const Tensor& a, std::size_t axis)
{
    // Two-pass: subtract the mean first.
    const Tensor mean = reduce_mean(a, axis);
    const auto l = axis_layout(a.shape(), axis);
    Tensor out(l.reduced);
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t i = 0; i < l.inner; ++i) {
            const double mu = mean[o * l.inner + i];
            double acc = 0.0;
            for (std::size_t k = 0; k < l.length; ++k) {
                const double d = a[(o * l.length + k) * l.inner + i] - mu;
                acc += d * d;
            }
            out[o * l.inner + i] = acc / static_cast<double>(l.length);
        }
    }
    return out;
}

double sum(const Tensor& a)
{
    return std::accumulate(a.values().begin(), a.values().end(), 0.0);
}

double squared_distance(const Tensor& a, const Tensor& b)
{
    if (a.size() != b.size())
        throw DimensionError("squared_distance: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace ptqkit

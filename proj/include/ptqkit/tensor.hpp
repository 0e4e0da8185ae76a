#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ptqkit {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// The last axis is treated as the channel axis throughout the toolkit:
/// rows() is the product of every leading dimension and cols() is the
/// length of the last one, so an [S x N x D] batch reads as an
/// [S*N x D] matrix without copying.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::vector<double> values);
    static Tensor identity(std::size_t n);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t axis) const;
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const noexcept;
    std::size_t cols() const noexcept;

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    /// Matrix access over the (rows, cols) view.
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

    std::span<const double> row(std::size_t r) const;
    std::span<double> row(std::size_t r);

    Tensor reshaped(Shape shape) const;
    /// Copy of slice `i` along the first axis.
    Tensor slice(std::size_t i) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise binary ops. `b` may equal `a` in shape or be a row vector
// whose length matches a.cols(); the row is then broadcast over every row.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Throws DomainError on any zero divisor.
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);

Tensor exp(const Tensor& a);
/// Throws DomainError on nonpositive inputs.
Tensor log2(const Tensor& a);
Tensor round_half_to_even(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

double round_half_to_even(double x) noexcept;

Tensor reduce_min(const Tensor& a, std::size_t axis);
Tensor reduce_max(const Tensor& a, std::size_t axis);
Tensor reduce_mean(const Tensor& a, std::size_t axis);
/// Population variance (divides by the axis length).
Tensor reduce_var(const Tensor& a, std::size_t axis);

double sum(const Tensor& a);
double squared_distance(const Tensor& a, const Tensor& b);

}  // namespace ptqkit

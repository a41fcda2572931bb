#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mpcl/core/errors.hpp"

namespace mpcl {

/// Dense row-major matrix with value semantics.
template <class T>
class Matrix {
public:
    using value_type = T;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) throw InvalidArgument("Matrix: data size does not match shape");
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<T> flat() noexcept { return data_; }
    std::span<const T> flat() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <class U>
    Matrix<U> cast() const {
        Matrix<U> out(rows_, cols_);
        std::transform(data_.begin(), data_.end(), out.storage().begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

template <class T>
double dot(std::span<const T> a, std::span<const T> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

template <class T>
double l2_norm(std::span<const T> a) {
    return std::sqrt(dot(a, a));
}

template <class T>
bool all_finite(std::span<const T> values) {
    return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

/// Stacks rows of several matrices with a common column count.
template <class T>
Matrix<T> vstack(std::span<const Matrix<T>> parts) {
    std::size_t rows = 0;
    std::size_t cols = parts.empty() ? 0 : parts.front().cols();
    for (const auto& p : parts) {
        if (p.cols() != cols) throw InvalidArgument("vstack: column mismatch");
        rows += p.rows();
    }
    Matrix<T> out(rows, cols);
    auto it = out.storage().begin();
    for (const auto& p : parts) it = std::copy(p.storage().begin(), p.storage().end(), it);
    return out;
}

/// Copies rows [first, first + count) into a new matrix.
template <class T>
Matrix<T> slice_rows(const Matrix<T>& m, std::size_t first, std::size_t count) {
    if (first + count > m.rows()) throw InvalidArgument("slice_rows: range out of bounds");
    Matrix<T> out(count, m.cols());
    std::copy_n(m.storage().begin() + static_cast<std::ptrdiff_t>(first * m.cols()), count * m.cols(),
                out.storage().begin());
    return out;
}

inline std::string shape_string(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace mpcl

#pragma once

#include <homproj/core.hpp>

#include <cassert>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace homproj::linalg {

/// Exact-zero guard only; callers own conditioning policy.
inline constexpr double kPivotThreshold = 1e-300;

class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill)
    {
    }

    static DenseMatrix identity(std::size_t n)
    {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

    void multiply(std::span<const double> x, std::span<double> out) const noexcept
    {
        for (std::size_t i = 0; i < rows_; ++i) {
            double s = 0.0;
            const double* r = data_.data() + i * cols_;
            for (std::size_t j = 0; j < cols_; ++j) s += r[j] * x[j];
            out[i] = s;
        }
    }

    StateVector operator*(std::span<const double> x) const
    {
        StateVector out(rows_);
        multiply(x, out);
        return out;
    }

    DenseMatrix operator*(const DenseMatrix& b) const
    {
        DenseMatrix c(rows_, b.cols_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t k = 0; k < cols_; ++k) {
                const double a = (*this)(i, k);
                if (a == 0.0) continue;
                for (std::size_t j = 0; j < b.cols_; ++j) c(i, j) += a * b(k, j);
            }
        return c;
    }

    DenseMatrix transpose() const
    {
        DenseMatrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    double norm1() const noexcept
    {
        double best = 0.0;
        for (std::size_t j = 0; j < cols_; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < rows_; ++i) s += std::abs((*this)(i, j));
            best = std::max(best, s);
        }
        return best;
    }

    double norm_inf() const noexcept
    {
        double best = 0.0;
        for (std::size_t i = 0; i < rows_; ++i) {
            double s = 0.0;
            for (double v : row(i)) s += std::abs(v);
            best = std::max(best, s);
        }
        return best;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// LU with partial pivoting, PA = LU stored in place.
class LuFactorization {
public:
    LuFactorization() = default;

    explicit LuFactorization(DenseMatrix a) : lu_(std::move(a)), perm_(lu_.rows())
    {
        const std::size_t n = lu_.rows();
        if (lu_.cols() != n) throw Error(ErrorKind::Singular, "LU of a non-square matrix");
        for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t p = k;
            double best = std::abs(lu_(k, k));
            for (std::size_t i = k + 1; i < n; ++i)
                if (std::abs(lu_(i, k)) > best) {
                    best = std::abs(lu_(i, k));
                    p = i;
                }
            if (!(best > kPivotThreshold)) throw Error(ErrorKind::Singular, "zero pivot in LU factorization");
            if (p != k) {
                std::swap_ranges(lu_.row(k).begin(), lu_.row(k).end(), lu_.row(p).begin());
                std::swap(perm_[k], perm_[p]);
            }
            const double inv = 1.0 / lu_(k, k);
            for (std::size_t i = k + 1; i < n; ++i) {
                const double m = (lu_(i, k) *= inv);
                if (m == 0.0) continue;
                for (std::size_t j = k + 1; j < n; ++j) lu_(i, j) -= m * lu_(k, j);
            }
        }
    }

    std::size_t size() const noexcept { return lu_.rows(); }

    void solve(std::span<const double> b, std::span<double> x) const
    {
        const std::size_t n = size();
        for (std::size_t i = 0; i < n; ++i) x[i] = b[perm_[i]];
        for (std::size_t i = 0; i < n; ++i) {
            double s = x[i];
            for (std::size_t j = 0; j < i; ++j) s -= lu_(i, j) * x[j];
            x[i] = s;
        }
        for (std::size_t i = n; i-- > 0;) {
            double s = x[i];
            for (std::size_t j = i + 1; j < n; ++j) s -= lu_(i, j) * x[j];
            x[i] = s / lu_(i, i);
        }
    }

    StateVector solve(std::span<const double> b) const
    {
        StateVector x(size());
        solve(b, x);
        return x;
    }

    DenseMatrix inverse() const
    {
        const std::size_t n = size();
        DenseMatrix inv(n, n);
        StateVector e(n), col(n);
        for (std::size_t j = 0; j < n; ++j) {
            std::fill(e.begin(), e.end(), 0.0);
            e[j] = 1.0;
            solve(e, col);
            for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
        }
        return inv;
    }

private:
    DenseMatrix lu_;
    std::vector<std::size_t> perm_;
};

inline StateVector lu_solve(const DenseMatrix& a, std::span<const double> b)
{
    return LuFactorization(a).solve(b);
}

/// 1-norm condition number ||A||_1 ||A^{-1}||_1, computed from the explicit
/// inverse (the matrices guarded this way are m x m with m = #invariants).
/// Returns +inf for singular A.
inline double condition_estimate(const DenseMatrix& a)
{
    try {
        const LuFactorization lu(a);
        return a.norm1() * lu.inverse().norm1();
    } catch (const Error&) {
        return std::numeric_limits<double>::infinity();
    }
}

struct Cholesky2x2 {
    double l11;
    double l21;
    double l22;
};

/// Factor [[a, b], [b, c]] = L^T L with L = [[l11, 0], [l21, l22]], so that
/// p^T M p = |L p|^2.
inline Cholesky2x2 cholesky_2x2(double a, double b, double c)
{
    const double det = a * c - b * b;
    if (!(a > 0.0) || !(c > 0.0) || !(det > 0.0))
        throw Error(ErrorKind::NotPositiveDefinite, "2x2 matrix is not positive definite");
    const double l22 = std::sqrt(c);
    return {std::sqrt(det / c), b / l22, l22};
}

/// Periodic operator (Cu)_i = sum_k c_k u_{(i+k) mod N} over a sparse stencil.
class CirculantOperator {
public:
    CirculantOperator() = default;
    CirculantOperator(std::size_t n, std::vector<std::pair<int, double>> stencil)
        : n_(n), stencil_(std::move(stencil))
    {
    }

    std::size_t size() const noexcept { return n_; }
    const std::vector<std::pair<int, double>>& stencil() const noexcept { return stencil_; }

    void apply(std::span<const double> u, std::span<double> out) const noexcept
    {
        const auto n = static_cast<long>(n_);
        for (long i = 0; i < n; ++i) {
            double s = 0.0;
            for (const auto& [off, c] : stencil_) {
                long j = (i + off) % n;
                if (j < 0) j += n;
                s += c * u[static_cast<std::size_t>(j)];
            }
            out[static_cast<std::size_t>(i)] = s;
        }
    }

    StateVector operator()(std::span<const double> u) const
    {
        StateVector out(n_);
        apply(u, out);
        return out;
    }

    /// First row of the dense matrix: row[j] is the coefficient of u_j in (Cu)_0.
    StateVector first_row() const
    {
        StateVector row(n_, 0.0);
        const auto n = static_cast<long>(n_);
        for (const auto& [off, c] : stencil_) {
            long j = off % n;
            if (j < 0) j += n;
            row[static_cast<std::size_t>(j)] += c;
        }
        return row;
    }

    DenseMatrix dense() const
    {
        DenseMatrix m(n_, n_);
        const auto n = static_cast<long>(n_);
        for (long i = 0; i < n; ++i)
            for (const auto& [off, c] : stencil_) {
                long j = (i + off) % n;
                if (j < 0) j += n;
                m(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) += c;
            }
        return m;
    }

private:
    std::size_t n_ = 0;
    std::vector<std::pair<int, double>> stencil_;
};

/// Dense-row circulant product: (Cu)_i = sum_j row[(j - i) mod N] u_j.
inline StateVector circulant_apply(std::span<const double> row, std::span<const double> u)
{
    const std::size_t n = u.size();
    StateVector out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += row[(j + n - i) % n] * u[j];
        out[i] = s;
    }
    return out;
}

} // namespace homproj::linalg

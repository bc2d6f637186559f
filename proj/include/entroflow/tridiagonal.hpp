#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace entroflow::detail {

/// Row i holds lower[i] * x[i-1] + diag[i] * x[i] + upper[i] * x[i+1];
/// lower[0] and upper[n-1] are ignored.
struct Tridiagonal {
    std::vector<double> lower, diag, upper;

    explicit Tridiagonal(std::size_t n = 0) : lower(n, 0.0), diag(n, 0.0), upper(n, 0.0) {}

    std::size_t size() const noexcept { return diag.size(); }

    Tridiagonal transposed() const
    {
        const std::size_t n = size();
        Tridiagonal t(n);
        t.diag = diag;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            t.upper[i] = lower[i + 1];
            t.lower[i + 1] = upper[i];
        }
        return t;
    }

    void multiply(std::span<const double> x, std::span<double> y) const
    {
        const std::size_t n = size();
        for (std::size_t i = 0; i < n; ++i) {
            double s = diag[i] * x[i];
            if (i > 0) s += lower[i] * x[i - 1];
            if (i + 1 < n) s += upper[i] * x[i + 1];
            y[i] = s;
        }
    }
};

/// Thomas elimination without pivoting; intended for diagonally dominant M-matrices.
class TridiagonalFactor {
public:
    explicit TridiagonalFactor(const Tridiagonal& m) : lower_(m.lower), c_(m.size()), inv_(m.size())
    {
        const std::size_t n = m.size();
        inv_[0] = 1.0 / m.diag[0];
        c_[0] = m.upper[0] * inv_[0];
        for (std::size_t i = 1; i < n; ++i) {
            inv_[i] = 1.0 / (m.diag[i] - m.lower[i] * c_[i - 1]);
            c_[i] = i + 1 < n ? m.upper[i] * inv_[i] : 0.0;
        }
    }

    void solve_in_place(std::span<double> x) const
    {
        const std::size_t n = inv_.size();
        x[0] *= inv_[0];
        for (std::size_t i = 1; i < n; ++i) x[i] = (x[i] - lower_[i] * x[i - 1]) * inv_[i];
        for (std::size_t i = n - 1; i-- > 0;) x[i] -= c_[i] * x[i + 1];
    }

private:
    std::vector<double> lower_, c_, inv_;
};

}  // namespace entroflow::detail

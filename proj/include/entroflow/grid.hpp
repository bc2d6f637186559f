#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "entroflow/error.hpp"

namespace entroflow {

/// Absolute floor applied wherever a log or a density ratio is formed.
inline constexpr double kDensityFloor = 1e-30;

/// Boundary values of a contained density may not exceed this fraction of its maximum.
inline constexpr double kTailContainment = 1e-8;

/// Uniform node-centred mesh on [x_min, x_max]; n counts nodes, both ends included.
struct Grid1D {
    double x_min = 0.0;
    double x_max = 1.0;
    std::size_t n = 0;
    double dx = 0.0;

    double x(std::size_t i) const noexcept
    {
        return i + 1 == n ? x_max : x_min + static_cast<double>(i) * dx;
    }

    std::vector<double> nodes() const
    {
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = x(i);
        return out;
    }

    /// Trapezoid weights: dx in the interior, dx/2 at both ends.
    std::vector<double> weights() const
    {
        std::vector<double> w(n, dx);
        w.front() = w.back() = 0.5 * dx;
        return w;
    }

    friend bool operator==(const Grid1D&, const Grid1D&) = default;
};

inline Grid1D make_grid(double x_min, double x_max, std::size_t n)
{
    if (!std::isfinite(x_min) || !std::isfinite(x_max))
        fail(ErrorKind::invalid_argument, "grid bounds must be finite");
    if (!(x_min < x_max)) fail(ErrorKind::invalid_argument, "grid requires x_min < x_max");
    if (n < 8) fail(ErrorKind::invalid_argument, "grid requires at least 8 nodes, got " + std::to_string(n));
    return Grid1D{x_min, x_max, n, (x_max - x_min) / static_cast<double>(n - 1)};
}

/// Nonnegative density sampled at the nodes of a grid.
struct DensityField {
    Grid1D grid;
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
    double operator[](std::size_t i) const noexcept { return values[i]; }
};

/// Node values of a 1-D velocity, drift or flux.
struct VectorField {
    Grid1D grid;
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
    double operator[](std::size_t i) const noexcept { return values[i]; }
};

/// Frames of a density evolution at t0, t0 + dt, t0 + 2 dt, ...
struct DensityFlow {
    Grid1D grid;
    double t0 = 0.0;
    double dt = 0.0;
    std::vector<DensityField> frames;

    double time(std::size_t k) const noexcept { return t0 + static_cast<double>(k) * dt; }
    double t_end() const noexcept { return time(frames.empty() ? 0 : frames.size() - 1); }
};

namespace detail {

inline void require_size(std::span<const double> f, const Grid1D& g, const char* what)
{
    if (f.size() != g.n)
        fail(ErrorKind::invalid_argument,
             std::string(what) + ": field has " + std::to_string(f.size()) + " values, grid has " +
                 std::to_string(g.n));
}

inline void require_finite(std::span<const double> f, const char* what)
{
    for (double v : f)
        if (!std::isfinite(v)) fail(ErrorKind::invalid_argument, std::string(what) + ": non-finite value");
}

inline void require_same_grid(const Grid1D& a, const Grid1D& b, const char* what)
{
    if (!(a == b)) fail(ErrorKind::invalid_argument, std::string(what) + ": grid mismatch");
}

}  // namespace detail

/// log(max(v, kDensityFloor)) elementwise.
inline std::vector<double> floored_log(std::span<const double> f)
{
    std::vector<double> out(f.size());
    std::transform(f.begin(), f.end(), out.begin(),
                   [](double v) { return std::log(std::max(v, kDensityFloor)); });
    return out;
}

/// Centred differences inside, second-order one-sided stencils at both ends.
inline VectorField gradient(std::span<const double> f, const Grid1D& g)
{
    detail::require_size(f, g, "gradient");
    detail::require_finite(f, "gradient");
    const std::size_t n = g.n;
    const double h = 0.5 / g.dx;
    VectorField out{g, std::vector<double>(n)};
    auto& d = out.values;
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) * h;
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (f[i + 1] - f[i - 1]) * h;
    d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) * h;
    return out;
}

/// Negative trapezoid-adjoint of gradient(): for every f and J,
///   integrate(gradient(f) * J) + integrate(f * divergence_flux(J)) == 0
/// up to rounding. Fluxes outside the domain are zero, so the divergence
/// always integrates to zero.
inline std::vector<double> divergence_flux(const VectorField& J)
{
    const Grid1D& g = J.grid;
    detail::require_size(J.values, g, "divergence_flux");
    detail::require_finite(J.values, "divergence_flux");
    const std::size_t n = g.n;
    const std::vector<double> w = g.weights();
    const double h = 0.5 / g.dx;

    // acc = G^T (w * J), scattered row by row of the gradient matrix G.
    std::vector<double> acc(n, 0.0);
    auto wj = [&](std::size_t k) { return w[k] * J.values[k]; };
    acc[0] += -3.0 * h * wj(0);
    acc[1] += 4.0 * h * wj(0);
    acc[2] += -h * wj(0);
    for (std::size_t k = 1; k + 1 < n; ++k) {
        acc[k - 1] -= h * wj(k);
        acc[k + 1] += h * wj(k);
    }
    acc[n - 1] += 3.0 * h * wj(n - 1);
    acc[n - 2] += -4.0 * h * wj(n - 1);
    acc[n - 3] += h * wj(n - 1);

    for (std::size_t i = 0; i < n; ++i) acc[i] = -acc[i] / w[i];
    return acc;
}

/// Trapezoid rule.
inline double integrate(std::span<const double> f, const Grid1D& g)
{
    detail::require_size(f, g, "integrate");
    const std::size_t n = g.n;
    double interior = 0.0;
    for (std::size_t i = 1; i + 1 < n; ++i) interior += f[i];
    return g.dx * (interior + 0.5 * (f[0] + f[n - 1]));
}

inline DensityField normalize(std::span<const double> f, const Grid1D& g)
{
    detail::require_size(f, g, "normalize");
    for (double v : f)
        if (!(v >= 0.0) || !std::isfinite(v))
            fail(ErrorKind::degenerate_density, "density values must be finite and nonnegative");
    const double mass = integrate(f, g);
    if (!(mass > 0.0) || !std::isfinite(mass))
        fail(ErrorKind::degenerate_density, "density has no positive finite mass");
    DensityField out{g, std::vector<double>(f.begin(), f.end())};
    for (double& v : out.values) v /= mass;
    return out;
}

inline double mass(const DensityField& rho)
{
    return integrate(rho.values, rho.grid);
}

/// Boundary-node values at most kTailContainment times the maximum.
inline bool tails_contained(const DensityField& rho, double rel = kTailContainment)
{
    const double peak = *std::max_element(rho.values.begin(), rho.values.end());
    return rho.values.front() <= rel * peak && rho.values.back() <= rel * peak;
}

template <class Fn>
std::vector<double> sample(const Grid1D& g, Fn&& fn)
{
    std::vector<double> out(g.n);
    for (std::size_t i = 0; i < g.n; ++i) out[i] = fn(g.x(i));
    return out;
}

}  // namespace entroflow

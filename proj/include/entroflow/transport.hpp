#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "entroflow/grid.hpp"

namespace entroflow {

namespace tolerances {
inline constexpr double sinkhorn_tol = 1e-9;
inline constexpr std::size_t sinkhorn_max_iter = 100000;
inline constexpr double constant_speed = 1e-3;
inline constexpr double benamou_brenier_relative = 0.02;
inline constexpr double displacement_convexity = 1e-4;
inline constexpr double displacement_endpoint = 1e-8;
}  // namespace tolerances

/// Trapezoid cumulative distribution of a density and its piecewise-linear inverse.
struct CdfQuantile {
    Grid1D grid;
    std::vector<double> cdf;

    /// Left-most preimage of u under the piecewise-linear cdf.
    double quantile(double u) const
    {
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        if (it == cdf.begin()) return grid.x(0);
        if (it == cdf.end()) return grid.x(grid.n - 1);
        const auto j = static_cast<std::size_t>(it - cdf.begin());
        const double lo = cdf[j - 1], hi = cdf[j];
        return grid.x(j - 1) + grid.dx * (u - lo) / (hi - lo);
    }

    double cdf_at(double x) const
    {
        if (x <= grid.x_min) return 0.0;
        if (x >= grid.x_max) return 1.0;
        const double s = (x - grid.x_min) / grid.dx;
        const auto i = std::min(static_cast<std::size_t>(s), grid.n - 2);
        const double a = s - static_cast<double>(i);
        return (1.0 - a) * cdf[i] + a * cdf[i + 1];
    }
};

inline CdfQuantile cdf_and_quantile(const DensityField& rho)
{
    const Grid1D& g = rho.grid;
    CdfQuantile out{g, std::vector<double>(g.n, 0.0)};
    for (std::size_t i = 1; i < g.n; ++i) out.cdf[i] = out.cdf[i - 1] + 0.5 * g.dx * (rho[i - 1] + rho[i]);
    const double total = out.cdf.back();
    if (!(total > 0.0)) fail(ErrorKind::degenerate_density, "cdf of a zero-mass density");
    for (double& c : out.cdf) c /= total;
    out.cdf.back() = 1.0;
    return out;
}

/// Quadratic Wasserstein distance through quantile functions, midpoint rule on
/// M = 4 max(n0, n1) points in (0, 1).
inline double w2_distance(const DensityField& nu0, const DensityField& nu1)
{
    const CdfQuantile a = cdf_and_quantile(nu0);
    const CdfQuantile b = cdf_and_quantile(nu1);
    const std::size_t M = 4 * std::max(nu0.size(), nu1.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < M; ++k) {
        const double u = (static_cast<double>(k) + 0.5) / static_cast<double>(M);
        const double d = a.quantile(u) - b.quantile(u);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(M));
}

/// Nondecreasing optimal map T = F1^{-1} ∘ F0 sampled at the nodes of nu0's grid.
struct TransportMap {
    Grid1D grid;
    std::vector<double> t_values;
};

inline TransportMap monotone_map(const DensityField& nu0, const DensityField& nu1)
{
    const CdfQuantile a = cdf_and_quantile(nu0);
    const CdfQuantile b = cdf_and_quantile(nu1);
    TransportMap T{nu0.grid, std::vector<double>(nu0.size())};
    for (std::size_t i = 0; i < T.t_values.size(); ++i) T.t_values[i] = b.quantile(a.cdf[i]);
    return T;
}

namespace detail {

inline double interpolate_density(const DensityField& rho, double x)
{
    const Grid1D& g = rho.grid;
    if (x <= g.x_min) return rho.values.front();
    if (x >= g.x_max) return rho.values.back();
    const double s = (x - g.x_min) / g.dx;
    const auto i = std::min(static_cast<std::size_t>(s), g.n - 2);
    const double a = s - static_cast<double>(i);
    return (1.0 - a) * rho[i] + a * rho[i + 1];
}

/// Quantile-level description of the displacement interpolant at time t.
class DisplacementGeodesic {
public:
    DisplacementGeodesic(const DensityField& nu0, const DensityField& nu1)
        : nu0_(nu0), nu1_(nu1), q0_(cdf_and_quantile(nu0)), q1_(cdf_and_quantile(nu1))
    {
    }

    double quantile(double u, double t) const { return (1.0 - t) * q0_.quantile(u) + t * q1_.quantile(u); }

    /// sup{u : Q_t(u) <= x}, found by bisection on the nondecreasing Q_t.
    double level(double x, double t) const
    {
        if (x < quantile(0.0, t)) return 0.0;
        if (x >= quantile(1.0, t)) return 1.0;
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 64 && hi - lo > 1e-17; ++it) {
            const double mid = 0.5 * (lo + hi);
            (quantile(mid, t) <= x ? lo : hi) = mid;
        }
        return lo;
    }

    /// Density of the push-forward at x: 1 / dQ_t/du evaluated at u = F_t(x).
    double density(double x, double t) const
    {
        if (x < quantile(0.0, t) || x > quantile(1.0, t)) return 0.0;
        const double u = level(x, t);
        double inv = 0.0;
        if (t < 1.0) {
            const double r0 = interpolate_density(nu0_, q0_.quantile(u));
            if (!(r0 > 0.0)) return 0.0;
            inv += (1.0 - t) / r0;
        }
        if (t > 0.0) {
            const double r1 = interpolate_density(nu1_, q1_.quantile(u));
            if (!(r1 > 0.0)) return 0.0;
            inv += t / r1;
        }
        return 1.0 / inv;
    }

    double velocity(double x, double t) const
    {
        const double u = level(x, t);
        return q1_.quantile(u) - q0_.quantile(u);
    }

private:
    const DensityField& nu0_;
    const DensityField& nu1_;
    CdfQuantile q0_, q1_;
};

inline void require_unit_time(double t)
{
    if (!(t >= 0.0 && t <= 1.0)) fail(ErrorKind::invalid_argument, "interpolation time must lie in [0, 1]");
}

}  // namespace detail

/// Push-forward of nu0 under (1-t) I + t T, on nu0's grid: the interpolated quantile
/// function is inverted and differentiated, then renormalized.
inline DensityField displacement_interpolate(const DensityField& nu0, const DensityField& nu1, double t)
{
    detail::require_unit_time(t);
    const detail::DisplacementGeodesic geo(nu0, nu1);
    const Grid1D& g = nu0.grid;
    return normalize(sample(g, [&](double x) { return geo.density(x, t); }), g);
}

/// Eulerian velocity of the displacement interpolant: v(Q_t(u)) = Q1(u) - Q0(u).
inline VectorField displacement_velocity(const DensityField& nu0, const DensityField& nu1, double t)
{
    detail::require_unit_time(t);
    const detail::DisplacementGeodesic geo(nu0, nu1);
    const Grid1D& g = nu0.grid;
    return VectorField{g, sample(g, [&](double x) { return geo.velocity(x, t); })};
}

struct DisplacementPath {
    DensityFlow flow;
    std::vector<VectorField> velocities;
};

/// Geodesic frames at t = k / intervals, k = 0..intervals.
inline DisplacementPath displacement_flow(const DensityField& nu0, const DensityField& nu1, std::size_t intervals)
{
    if (intervals == 0) fail(ErrorKind::invalid_argument, "displacement_flow needs at least one interval");
    const detail::DisplacementGeodesic geo(nu0, nu1);
    const Grid1D& g = nu0.grid;
    DisplacementPath path{DensityFlow{g, 0.0, 1.0 / static_cast<double>(intervals), {}}, {}};
    for (std::size_t k = 0; k <= intervals; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(intervals);
        path.flow.frames.push_back(normalize(sample(g, [&](double x) { return geo.density(x, t); }), g));
        path.velocities.push_back(VectorField{g, sample(g, [&](double x) { return geo.velocity(x, t); })});
    }
    return path;
}

/// ∫ ∫ |v|² ρ_t dx dt of a supplied (flow, velocity) pair, trapezoid in time.
/// The pair is expected to satisfy the continuity equation; that is not checked here.
inline double benamou_brenier_action(const DensityFlow& flow, const std::vector<VectorField>& velocities)
{
    if (velocities.size() != flow.frames.size())
        fail(ErrorKind::invalid_argument, "benamou_brenier_action: one velocity per frame required");
    if (flow.frames.size() < 2) fail(ErrorKind::invalid_argument, "benamou_brenier_action: at least two frames");
    const Grid1D& g = flow.grid;
    std::vector<double> kinetic(flow.frames.size());
    std::vector<double> f(g.n);
    for (std::size_t k = 0; k < flow.frames.size(); ++k) {
        detail::require_same_grid(velocities[k].grid, g, "benamou_brenier_action");
        for (std::size_t i = 0; i < g.n; ++i) f[i] = velocities[k][i] * velocities[k][i] * flow.frames[k][i];
        kinetic[k] = integrate(f, g);
    }
    double action = 0.5 * (kinetic.front() + kinetic.back());
    for (std::size_t k = 1; k + 1 < kinetic.size(); ++k) action += kinetic[k];
    return action * flow.dt;
}

/// Entropic Kantorovich coupling with marginals p and q.
struct DiscreteCoupling {
    std::vector<double> p;
    std::vector<double> q;
    Eigen::MatrixXd pi;
    std::size_t iterations = 0;
    double residual = 0.0;
};

inline double transport_cost(const DiscreteCoupling& c, const Eigen::MatrixXd& cost)
{
    return (c.pi.array() * cost.array()).sum();
}

namespace detail {

inline double log_sum_exp(const double* v, std::size_t n)
{
    const double m = *std::max_element(v, v + n);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

inline void require_weights(const std::vector<double>& w, const char* what)
{
    double total = 0.0;
    for (double v : w) {
        if (!(v > 0.0) || !std::isfinite(v))
            fail(ErrorKind::invalid_argument, std::string(what) + ": weights must be strictly positive");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) fail(ErrorKind::invalid_argument, std::string(what) + ": weights must sum to 1");
}

}  // namespace detail

/// Log-domain Sinkhorn iteration for min <C, π> - ε H(π) over couplings of p and q.
/// Stops once the row-marginal L1 error (columns are exact after each sweep) is at most tol.
inline DiscreteCoupling sinkhorn_coupling(const std::vector<double>& p, const std::vector<double>& q,
                                          const Eigen::MatrixXd& cost, double eps,
                                          double tol = tolerances::sinkhorn_tol,
                                          std::size_t max_iter = tolerances::sinkhorn_max_iter)
{
    detail::require_weights(p, "sinkhorn_coupling p");
    detail::require_weights(q, "sinkhorn_coupling q");
    const auto m = p.size(), n = q.size();
    if (static_cast<std::size_t>(cost.rows()) != m || static_cast<std::size_t>(cost.cols()) != n)
        fail(ErrorKind::invalid_argument, "sinkhorn_coupling: cost shape does not match the marginals");
    if (!cost.allFinite()) fail(ErrorKind::invalid_argument, "sinkhorn_coupling: cost must be finite");
    if (!(eps > 0.0)) fail(ErrorKind::invalid_argument, "sinkhorn_coupling: eps must be positive");

    std::vector<double> f(m, 0.0), g(n, 0.0), scratch(std::max(m, n));
    auto row_error = [&] {
        double err = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += std::exp((f[i] + g[j] - cost(i, j)) / eps);
            err += std::abs(s - p[i]);
        }
        return err;
    };

    DiscreteCoupling out{p, q, Eigen::MatrixXd(m, n), 0, std::numeric_limits<double>::infinity()};
    for (std::size_t it = 1; it <= max_iter; ++it) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) scratch[j] = (g[j] - cost(i, j)) / eps;
            f[i] = eps * (std::log(p[i]) - detail::log_sum_exp(scratch.data(), n));
        }
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < m; ++i) scratch[i] = (f[i] - cost(i, j)) / eps;
            g[j] = eps * (std::log(q[j]) - detail::log_sum_exp(scratch.data(), m));
        }
        out.iterations = it;
        out.residual = row_error();
        if (out.residual <= tol) break;
    }
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.pi(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / eps);
    if (out.residual > tol)
        fail(ErrorKind::no_convergence, "sinkhorn_coupling: marginal residual " + format_real(out.residual) +
                                            " after " + std::to_string(max_iter) + " iterations");
    return out;
}

/// Exact quadratic Kantorovich cost between two equal-size uniform point clouds:
/// the mean squared gap between sorted samples.
inline double sorted_matching_oracle(std::vector<double> x, std::vector<double> y)
{
    if (x.size() != y.size() || x.empty())
        fail(ErrorKind::invalid_argument, "sorted_matching_oracle: point sets must be nonempty and equal in size");
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    return acc / static_cast<double>(x.size());
}

}  // namespace entroflow

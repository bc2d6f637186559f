#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "entroflow/functionals.hpp"
#include "entroflow/grid.hpp"

namespace entroflow {

/// The pair (rho_tilde, rho) on which relative entropy D(rho_tilde || rho) is a
/// functional on the product of two Wasserstein spaces.
struct PairState {
    DensityField rho_tilde;
    DensityField rho;
};

/// Wasserstein gradient of D on the product space: g1 = ∇log(ρ̃/ρ), g2 = -∇(ρ̃/ρ).
struct ProductGradient {
    VectorField g1;
    VectorField g2;
};

struct ProductFluxes {
    VectorField J1;
    VectorField J2;
};

/// Time derivatives of both components under steepest descent.
struct ProductTendency {
    std::vector<double> d_rho_tilde;
    std::vector<double> d_rho;
};

namespace tolerances {
inline constexpr double opposite_flux = 1e-12;
inline constexpr double sum_field_drift = 1e-10;
inline constexpr double product_mass = 1e-12;
inline constexpr double reff_rate = 0.01;
inline constexpr double reff_min_D = 1e-5;
inline constexpr double reff_abs_floor = 1e-6;
inline constexpr double lyapunov_gradient_floor = 1e-8;
inline constexpr double lyapunov_increase = 0.0;
inline constexpr double pt2006_rate = 0.01;
inline constexpr double reff_decomposition = 1e-12;
inline constexpr int max_step_halvings = 10;
}  // namespace tolerances

namespace detail {

inline std::vector<double> density_ratio(const PairState& s)
{
    std::vector<double> r(s.rho.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = s.rho_tilde[i] / std::max(s.rho[i], kDensityFloor);
    return r;
}

inline void require_pair(const PairState& s)
{
    detail::require_same_grid(s.rho_tilde.grid, s.rho.grid, "pair state");
}

}  // namespace detail

/// g2 is formed through the chain rule as -(ρ̃/ρ) g1, so both components come
/// from the same discrete log-ratio gradient.
inline ProductGradient product_gradient(const PairState& s)
{
    detail::require_pair(s);
    const std::vector<double> r = detail::density_ratio(s);
    ProductGradient out{score_difference(s.rho_tilde, s.rho), VectorField{s.rho.grid, std::vector<double>(r.size())}};
    for (std::size_t i = 0; i < r.size(); ++i) out.g2.values[i] = -r[i] * out.g1[i];
    return out;
}

/// Node fluxes J1 = ∇(ρ̃/ρ) ρ and J2 = -J1, both taken from the one expression.
inline ProductFluxes fluxes(const PairState& s)
{
    const ProductGradient grad = product_gradient(s);
    const Grid1D& g = s.rho.grid;
    ProductFluxes out{VectorField{g, std::vector<double>(g.n)}, VectorField{g, std::vector<double>(g.n)}};
    for (std::size_t i = 0; i < g.n; ++i) {
        const double J = -grad.g2[i] * s.rho[i];
        out.J1.values[i] = J;
        out.J2.values[i] = -J;
    }
    return out;
}

/// Conservative form of ∂ρ̃/∂t = ∇·(ρ ∇(ρ̃/ρ)), ∂ρ/∂t = -∇·(ρ ∇(ρ̃/ρ)):
/// face fluxes ρ_face (r_{i+1} - r_i) / dx with zero flux through the ends,
/// divided by the trapezoid weights. The two tendencies are exact negatives.
inline ProductTendency product_flow_tendency(const PairState& s)
{
    detail::require_pair(s);
    const Grid1D& g = s.rho.grid;
    const std::size_t n = g.n;
    const std::vector<double> r = detail::density_ratio(s);
    const std::vector<double> w = g.weights();

    std::vector<double> face(n + 1, 0.0);
    for (std::size_t f = 0; f + 1 < n; ++f)
        face[f + 1] = 0.5 * (s.rho[f] + s.rho[f + 1]) * (r[f + 1] - r[f]) / g.dx;

    ProductTendency out{std::vector<double>(n), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        out.d_rho_tilde[i] = (face[i + 1] - face[i]) / w[i];
        out.d_rho[i] = ((-face[i + 1]) - (-face[i])) / w[i];
    }
    return out;
}

/// Explicit step bound 0.25 dx² min(1, ρ/ρ̃): the ρ-equation diffuses with coefficient ρ̃/ρ.
inline double product_flow_stable_dt(const PairState& s)
{
    detail::require_pair(s);
    double worst_ratio = 1.0;
    for (std::size_t i = 0; i < s.rho.size(); ++i)
        if (s.rho_tilde[i] > kDensityFloor)
            worst_ratio = std::max(worst_ratio, s.rho_tilde[i] / std::max(s.rho[i], kDensityFloor));
    return 0.25 * s.rho.grid.dx * s.rho.grid.dx / worst_ratio;
}

namespace detail {

inline bool try_euler(PairState& s, double dt)
{
    const ProductTendency d = product_flow_tendency(s);
    PairState next = s;
    for (std::size_t i = 0; i < s.rho.size(); ++i) {
        next.rho_tilde.values[i] += dt * d.d_rho_tilde[i];
        next.rho.values[i] += dt * d.d_rho[i];
    }
    for (auto* field : {&next.rho_tilde.values, &next.rho.values})
        for (double& v : *field) {
            if (v < -1e-12 || !std::isfinite(v)) return false;
            v = std::max(v, 0.0);
        }
    s = std::move(next);
    return true;
}

}  // namespace detail

/// Forward Euler step of the product-space steepest descent. On positivity loss
/// the step is retried as 2, 4, ..., 1024 substeps before giving up.
inline PairState product_flow_step(const PairState& s, double dt)
{
    detail::require_pair(s);
    if (!(dt > 0.0)) fail(ErrorKind::invalid_argument, "product_flow_step: dt must be positive");
    for (int halvings = 0; halvings <= tolerances::max_step_halvings; ++halvings) {
        const std::size_t substeps = std::size_t{1} << halvings;
        const double h = dt / static_cast<double>(substeps);
        PairState trial = s;
        bool ok = true;
        for (std::size_t k = 0; k < substeps && ok; ++k) ok = detail::try_euler(trial, h);
        if (ok) return trial;
    }
    fail(ErrorKind::scheme_failure, "product_flow_step lost positivity after " +
                                        std::to_string(tolerances::max_step_halvings) +
                                        " halvings; use dt below " + format_real(product_flow_stable_dt(s)));
}

/// States after 0, stride, 2*stride, ... steps up to `steps`.
inline std::vector<PairState> product_flow_trajectory(const PairState& s0, double dt, std::size_t steps,
                                                      std::size_t stride = 1)
{
    if (stride == 0 || steps % stride != 0)
        fail(ErrorKind::invalid_argument, "stride must be positive and divide the step count");
    std::vector<PairState> out;
    out.reserve(steps / stride + 1);
    out.push_back(s0);
    PairState s = s0;
    for (std::size_t k = 1; k <= steps; ++k) {
        s = product_flow_step(s, dt);
        if (k % stride == 0) out.push_back(s);
    }
    return out;
}

/// d/dt D(ρ̃_t || ρ_t) = ∫ ∇log(ρ̃/ρ)·(ṽ - v) ρ̃ for continuity flows with velocities ṽ, v.
inline double pt2006_rate(const PairState& s, const VectorField& v_tilde, const VectorField& v)
{
    detail::require_pair(s);
    detail::require_same_grid(v_tilde.grid, s.rho.grid, "pt2006_rate");
    detail::require_same_grid(v.grid, s.rho.grid, "pt2006_rate");
    const VectorField g1 = score_difference(s.rho_tilde, s.rho);
    std::vector<double> f(g1.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = g1[i] * (v_tilde[i] - v[i]) * s.rho_tilde[i];
    return integrate(f, s.rho.grid);
}

/// Entropy production along the product-space steepest descent:
/// -∫ (1 + ρ̃/ρ) |∇log(ρ̃/ρ)|² ρ̃.
inline double reff_rate(const PairState& s)
{
    const ProductGradient grad = product_gradient(s);
    const std::vector<double> r = detail::density_ratio(s);
    std::vector<double> f(r.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = (1.0 + r[i]) * grad.g1[i] * grad.g1[i] * s.rho_tilde[i];
    return -integrate(f, s.rho.grid);
}

/// The two terms of reff_rate kept apart: relative Fisher information and
/// ∫ (ρ̃/ρ) |∇log(ρ̃/ρ)|² ρ̃ = ∫ |∇(ρ̃/ρ)|² ρ.
struct ReffDecomposition {
    double fisher = 0.0;
    double cross = 0.0;
};

inline ReffDecomposition reff_decomposition(const PairState& s)
{
    const ProductGradient grad = product_gradient(s);
    std::vector<double> f(s.rho.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = grad.g2[i] * grad.g2[i] * s.rho[i];
    return {relative_fisher(s.rho_tilde, s.rho), integrate(f, s.rho.grid)};
}

struct RateComparison {
    double reff = 0.0;
    double same_fp = 0.0;
};

/// reff_rate against the same-Fokker-Planck decay rate -(σ²/2) I(ρ̃ || ρ).
inline RateComparison rate_comparison(const PairState& s, double sigma2)
{
    if (!(sigma2 > 0.0)) fail(ErrorKind::invalid_argument, "rate_comparison: sigma2 must be positive");
    return {reff_rate(s), -0.5 * sigma2 * relative_fisher(s.rho_tilde, s.rho)};
}

}  // namespace entroflow

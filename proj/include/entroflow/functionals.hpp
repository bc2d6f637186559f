#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "entroflow/grid.hpp"

namespace entroflow {

/// Energy landscape H(x).
struct Hamiltonian {
    std::function<double(double)> h;

    double operator()(double x) const { return h(x); }
};

/// kT with Boltzmann's constant fixed to one.
struct Temperature {
    double theta = 1.0;

    explicit Temperature(double value) : theta(value)
    {
        if (!(value > 0.0) || !std::isfinite(value))
            fail(ErrorKind::invalid_argument, "temperature must be positive and finite");
    }
};

namespace tolerances {
inline constexpr double gibbs_identity = 1e-8;
inline constexpr double relative_entropy_floor = -1e-10;
}  // namespace tolerances

/// Differential entropy -∫ rho log rho; nodes at or below the floor contribute nothing.
inline double entropy(const DensityField& rho)
{
    std::vector<double> f(rho.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double r = rho[i];
        f[i] = r > kDensityFloor ? r * std::log(r) : 0.0;
    }
    return -integrate(f, rho.grid);
}

inline double internal_energy(const Hamiltonian& H, const DensityField& rho)
{
    const std::vector<double> h = sample(rho.grid, H.h);
    std::vector<double> f(rho.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = h[i] * rho[i];
    return integrate(f, rho.grid);
}

inline double free_energy(const Hamiltonian& H, const DensityField& rho, Temperature theta)
{
    return internal_energy(H, rho) - theta.theta * entropy(rho);
}

struct BoltzmannResult {
    DensityField density;
    double Z = 0.0;
};

/// Z^{-1} exp(-H/θ) with Z the trapezoid integral of the unnormalized weight.
inline BoltzmannResult boltzmann_density(const Hamiltonian& H, Temperature theta, const Grid1D& g)
{
    std::vector<double> weight = sample(g, [&](double x) { return std::exp(-H(x) / theta.theta); });
    const double Z = integrate(weight, g);
    if (!(Z > 0.0) || !std::isfinite(Z))
        fail(ErrorKind::degenerate_density, "Boltzmann weight is not integrable on the grid");
    for (double& v : weight) v /= Z;
    return {DensityField{g, std::move(weight)}, Z};
}

/// D(rho_tilde || rho) = ∫ rho_tilde log(rho_tilde / rho).
inline double relative_entropy(const DensityField& rho_tilde, const DensityField& rho)
{
    detail::require_same_grid(rho_tilde.grid, rho.grid, "relative_entropy");
    std::vector<double> f(rho.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double a = rho_tilde[i];
        f[i] = a > kDensityFloor ? a * (std::log(a) - std::log(std::max(rho[i], kDensityFloor))) : 0.0;
    }
    return integrate(f, rho.grid);
}

/// gradient(log(rho_tilde / rho)) with both arguments floored.
inline VectorField score_difference(const DensityField& rho_tilde, const DensityField& rho)
{
    detail::require_same_grid(rho_tilde.grid, rho.grid, "score_difference");
    std::vector<double> log_ratio(rho.size());
    for (std::size_t i = 0; i < log_ratio.size(); ++i)
        log_ratio[i] = std::log(std::max(rho_tilde[i], kDensityFloor)) - std::log(std::max(rho[i], kDensityFloor));
    return gradient(log_ratio, rho.grid);
}

/// ∫ |∇ log(rho_tilde / rho)|² rho_tilde.
inline double relative_fisher(const DensityField& rho_tilde, const DensityField& rho)
{
    const VectorField s = score_difference(rho_tilde, rho);
    std::vector<double> f(rho.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = s[i] * s[i] * rho_tilde[i];
    return integrate(f, rho.grid);
}

/// |D(rho || rho_bar) - F/θ - log Z|, which vanishes identically in the continuum.
inline double free_energy_identity_gap(const Hamiltonian& H, const DensityField& rho, Temperature theta)
{
    const auto [rho_bar, Z] = boltzmann_density(H, theta, rho.grid);
    return std::abs(relative_entropy(rho, rho_bar) - free_energy(H, rho, theta) / theta.theta - std::log(Z));
}

/// Rate of change of F/θ along ∂ρ/∂t + ∇·(vρ) = 0:
/// the ρ-weighted inner product of the Wasserstein gradient ∇log ρ + ∇H/θ with v.
inline double free_energy_rate(const DensityField& rho, const VectorField& v, const Hamiltonian& H,
                               Temperature theta)
{
    detail::require_same_grid(rho.grid, v.grid, "free_energy_rate");
    const VectorField score = gradient(floored_log(rho.values), rho.grid);
    const VectorField force = gradient(sample(rho.grid, H.h), rho.grid);
    std::vector<double> f(rho.size());
    for (std::size_t i = 0; i < f.size(); ++i)
        f[i] = (score[i] + force[i] / theta.theta) * v[i] * rho[i];
    return integrate(f, rho.grid);
}

}  // namespace entroflow

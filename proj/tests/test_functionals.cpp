#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "entroflow/densities.hpp"
#include "entroflow/functionals.hpp"
#include "support/oracles.hpp"
#include "support/testing.hpp"

using namespace entroflow;

namespace {

const Hamiltonian kQuadratic{[](double x) { return 0.5 * x * x; }};
const Hamiltonian kZero{[](double) { return 0.0; }};

/// rho_bar times a positive smooth bump field, renormalized.
DensityField perturbed(const DensityField& base, std::mt19937& rng)
{
    std::uniform_real_distribution<double> center(-2.0, 2.0), height(-0.5, 0.5), width(0.3, 1.5);
    const double c = center(rng), a = height(rng), s = width(rng);
    std::vector<double> f(base.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double x = base.grid.x(i);
        f[i] = base[i] * (1.0 + a * std::exp(-0.5 * (x - c) * (x - c) / (s * s)));
    }
    return normalize(f, base.grid);
}

DensityField random_mixture(const Grid1D& g, std::mt19937& rng)
{
    std::uniform_real_distribution<double> mean(-2.0, 2.0), var(0.3, 1.5), weight(0.2, 1.0);
    return densities::mixture(g, {{weight(rng), mean(rng), var(rng)}, {weight(rng), mean(rng), var(rng)}});
}

}  // namespace

TEST(Entropy, UniformOnUnitInterval)
{
    const Grid1D g = make_grid(0, 1, 101);
    EXPECT_NEAR(entropy(densities::uniform(g, 0, 1)), 0.0, 1e-14);
}

TEST(Entropy, StandardGaussian)
{
    const Grid1D g = make_grid(-8, 8, 401);
    EXPECT_NEAR(entropy(densities::gaussian(g, 0, 1)), oracle::gauss_entropy(1.0), 1e-6);
}

TEST(Entropy, ScalingLaw)
{
    const Grid1D g = make_grid(-1, 1, 2001);
    EXPECT_NEAR(entropy(densities::gaussian(g, 0, 0.01)), oracle::gauss_entropy(1.0) + std::log(0.1), 1e-5);
}

TEST(InternalEnergy, ZeroHamiltonian)
{
    const Grid1D g = make_grid(-8, 8, 401);
    EXPECT_EQ(internal_energy(kZero, densities::gaussian(g, 0, 1)), 0.0);
}

TEST(InternalEnergy, Moments)
{
    const Grid1D g = make_grid(-8, 8, 401);
    EXPECT_NEAR(internal_energy(kQuadratic, densities::gaussian(g, 0, 1)), 0.5, 1e-8);
    const Grid1D wide = make_grid(-8, 12, 501);
    EXPECT_NEAR(internal_energy(Hamiltonian{[](double x) { return x; }}, densities::gaussian(wide, 2, 1)), 2.0, 1e-8);
}

TEST(FreeEnergy, UniformWithZeroHamiltonian)
{
    const Grid1D g = make_grid(0, 1, 101);
    EXPECT_NEAR(free_energy(kZero, densities::uniform(g, 0, 1), Temperature(3.7)), 0.0, 1e-14);
}

TEST(FreeEnergy, StandardGaussianQuadratic)
{
    const Grid1D g = make_grid(-8, 8, 401);
    EXPECT_NEAR(free_energy(kQuadratic, densities::gaussian(g, 0, 1), Temperature(1.0)),
                0.5 - oracle::gauss_entropy(1.0), 1e-5);
}

TEST(FreeEnergy, GibbsPrincipleUnderPerturbations)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const Temperature theta(1.0);
    const DensityField bar = boltzmann_density(kQuadratic, theta, g).density;
    const double F_bar = free_energy(kQuadratic, bar, theta);
    std::mt19937 rng(20240611);
    for (int k = 0; k < 20; ++k) EXPECT_GE(free_energy(kQuadratic, perturbed(bar, rng), theta), F_bar - 1e-10);
}

TEST(Temperature, RejectsNonPositive)
{
    EXPECT_ERROR_KIND(Temperature(0.0), ErrorKind::invalid_argument);
    EXPECT_ERROR_KIND(Temperature(-1.0), ErrorKind::invalid_argument);
}

TEST(Boltzmann, ZeroHamiltonianIsUniform)
{
    const Grid1D g = make_grid(0, 1, 11);
    const auto [rho, Z] = boltzmann_density(kZero, Temperature(1.0), g);
    EXPECT_NEAR(Z, 1.0, 1e-15);
    for (double v : rho.values) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(Boltzmann, QuadraticIsStandardGaussian)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const auto [rho, Z] = boltzmann_density(kQuadratic, Temperature(1.0), g);
    EXPECT_NEAR(Z, std::sqrt(2.0 * std::numbers::pi), 1e-8);
    for (std::size_t i = 0; i < g.n; ++i) EXPECT_NEAR(rho[i], oracle::gauss_pdf(g.x(i), 0, 1), 1e-10);
}

TEST(Boltzmann, VarianceEqualsTemperature)
{
    const Grid1D g = make_grid(-10, 10, 501);
    const auto m = oracle::node_moments(g, boltzmann_density(kQuadratic, Temperature(2.0), g).density.values);
    EXPECT_NEAR(m.mean, 0.0, 1e-12);
    EXPECT_NEAR(m.variance, 2.0, 1e-8);
}

TEST(Boltzmann, RejectsNonIntegrableWeight)
{
    const Grid1D g = make_grid(-8, 8, 401);
    EXPECT_ERROR_KIND(boltzmann_density(Hamiltonian{[](double x) { return -1e4 * x * x; }}, Temperature(1.0), g),
                      ErrorKind::degenerate_density);
}

TEST(RelativeEntropy, Identical)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityField a = densities::gaussian(g, 0.4, 0.7);
    EXPECT_NEAR(relative_entropy(a, a), 0.0, 1e-12);
}

TEST(RelativeEntropy, GaussianClosedForms)
{
    const Grid1D g = make_grid(-8, 8, 401);
    EXPECT_NEAR(relative_entropy(densities::gaussian(g, 0, 1), densities::gaussian(g, 1, 1)),
                oracle::gauss_kl(0, 1, 1, 1), 1e-6);
    const Grid1D wide = make_grid(-14, 14, 701);
    EXPECT_NEAR(relative_entropy(densities::gaussian(wide, 0, 1), densities::gaussian(wide, 0, 4)),
                oracle::gauss_kl(0, 1, 0, 4), 1e-5);
    EXPECT_NEAR(oracle::gauss_kl(0, 1, 0, 4), 0.31815, 1e-5);
}

TEST(RelativeEntropy, GridMismatch)
{
    const DensityField a = densities::gaussian(make_grid(-8, 8, 401), 0, 1);
    const DensityField b = densities::gaussian(make_grid(-8, 8, 201), 0, 1);
    EXPECT_ERROR_KIND(relative_entropy(a, b), ErrorKind::invalid_argument);
    EXPECT_ERROR_KIND(relative_fisher(a, b), ErrorKind::invalid_argument);
}

TEST(RelativeEntropy, NonnegativeOnRandomPairs)
{
    const Grid1D g = make_grid(-8, 8, 401);
    std::mt19937 rng(7);
    for (int k = 0; k < 20; ++k) {
        const DensityField a = random_mixture(g, rng), b = random_mixture(g, rng);
        EXPECT_GE(relative_entropy(a, b), tolerances::relative_entropy_floor);
        EXPECT_GE(relative_fisher(a, b), 0.0);
    }
}

TEST(GibbsIdentity, Gap)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const Temperature theta(1.0);
    EXPECT_LE(free_energy_identity_gap(kQuadratic, boltzmann_density(kQuadratic, theta, g).density, theta), 1e-10);
    EXPECT_LE(free_energy_identity_gap(kQuadratic, densities::gaussian(g, 1, 1), theta), 1e-8);
    EXPECT_LE(free_energy_identity_gap(kQuadratic, densities::gaussian(g, 0, 0.25), theta), 1e-8);
}

TEST(GibbsIdentity, HoldsForMixtures)
{
    // exp(-H/θ) must stay above the density floor across the whole domain.
    const Grid1D g = make_grid(-4, 4, 401);
    std::mt19937 rng(11);
    const Hamiltonian quartic{[](double x) { return 0.25 * (x * x - 1.0) * (x * x - 1.0); }};
    for (int k = 0; k < 5; ++k)
        EXPECT_LE(free_energy_identity_gap(quartic, random_mixture(g, rng), Temperature(1.5)),
                  tolerances::gibbs_identity);
}

TEST(RelativeFisher, Identical)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityField a = densities::gaussian(g, 0.4, 0.7);
    EXPECT_NEAR(relative_fisher(a, a), 0.0, 1e-12);
}

TEST(RelativeFisher, ShiftedGaussians)
{
    const Grid1D g = make_grid(-8, 8, 401);
    for (double m : {0.5, 1.0, 1.5})
        EXPECT_NEAR(relative_fisher(densities::gaussian(g, m, 1), densities::gaussian(g, 0, 1)), m * m, 1e-4);
}

TEST(FreeEnergyRate, VanishesAtBoltzmann)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityField bar = boltzmann_density(kQuadratic, Temperature(1.0), g).density;
    const VectorField v{g, sample(g, [](double x) { return std::sin(x) + 0.3; })};
    EXPECT_NEAR(free_energy_rate(bar, v, kQuadratic, Temperature(1.0)), 0.0, 1e-8);
}

TEST(FreeEnergyRate, SteepestDescentGivesMinusFisher)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const Temperature theta(1.0);
    const DensityField rho = densities::gaussian(g, 1.0, 0.5);
    const DensityField bar = boltzmann_density(kQuadratic, theta, g).density;
    const VectorField score = gradient(floored_log(rho.values), g);
    const VectorField force = gradient(sample(g, kQuadratic.h), g);
    VectorField v{g, std::vector<double>(g.n)};
    for (std::size_t i = 0; i < g.n; ++i) v.values[i] = -(score[i] + force[i]);
    EXPECT_NEAR(free_energy_rate(rho, v, kQuadratic, theta), -relative_fisher(rho, bar), 1e-8);
}

TEST(FreeEnergyRate, ZeroVelocity)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const VectorField v{g, std::vector<double>(g.n, 0.0)};
    EXPECT_EQ(free_energy_rate(densities::gaussian(g, 1, 1), v, kQuadratic, Temperature(1.0)), 0.0);
}

// Smooth Gaussian tails make the trapezoid rule spectrally accurate; a density that is
// positive at the ends exposes the dx² term.
TEST(Functionals, SecondOrderUnderRefinement)
{
    const Temperature theta(1.0);
    auto values = [&](std::size_t n) {
        const Grid1D g = make_grid(0, 3, n);
        const DensityField rho =
            normalize(sample(g, [](double x) { return std::exp(-x) * (1.0 + 0.5 * std::sin(2.0 * x)); }), g);
        return std::vector<double>{entropy(rho), internal_energy(kQuadratic, rho), free_energy(kQuadratic, rho, theta)};
    };
    const auto ref = values(4001), a = values(101), b = values(201);
    for (std::size_t k = 0; k < ref.size(); ++k) {
        const double ratio = std::abs(a[k] - ref[k]) / std::abs(b[k] - ref[k]);
        EXPECT_GE(ratio, 3.5) << "functional " << k;
        EXPECT_LE(ratio, 4.5) << "functional " << k;
    }
}

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "entroflow/densities.hpp"
#include "entroflow/grid.hpp"
#include "support/oracles.hpp"
#include "support/testing.hpp"

using namespace entroflow;

TEST(MakeGrid, RejectsTooFewNodes)
{
    EXPECT_ERROR_KIND(make_grid(-1, 1, 5), ErrorKind::invalid_argument);
}

TEST(MakeGrid, RejectsBadBounds)
{
    EXPECT_ERROR_KIND(make_grid(1, 1, 11), ErrorKind::invalid_argument);
    EXPECT_ERROR_KIND(make_grid(2, 1, 11), ErrorKind::invalid_argument);
    EXPECT_ERROR_KIND(make_grid(0, std::numeric_limits<double>::infinity(), 11), ErrorKind::invalid_argument);
    EXPECT_ERROR_KIND(make_grid(std::nan(""), 1, 11), ErrorKind::invalid_argument);
}

TEST(MakeGrid, Spacing)
{
    EXPECT_NEAR(make_grid(0, 1, 11).dx, 0.1, 1e-15);
    EXPECT_NEAR(make_grid(-8, 8, 401).dx, 0.04, 1e-15);
}

TEST(MakeGrid, NodesIncreaseAndHitBothEnds)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const auto x = g.nodes();
    EXPECT_EQ(x.front(), -8.0);
    EXPECT_EQ(x.back(), 8.0);
    for (std::size_t i = 1; i < x.size(); ++i) EXPECT_GT(x[i], x[i - 1]);
}

TEST(Gradient, ConstantIsZero)
{
    const Grid1D g = make_grid(0, 1, 11);
    for (double v : gradient(std::vector<double>(g.n, 4.2), g).values) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Gradient, ExactOnLinear)
{
    const Grid1D g = make_grid(0, 1, 11);
    const auto f = sample(g, [](double x) { return 3.0 * x; });
    for (double v : gradient(f, g).values) EXPECT_NEAR(v, 3.0, 1e-12);
}

TEST(Gradient, ExactOnQuadraticInterior)
{
    const Grid1D g = make_grid(0, 1, 11);
    const auto f = sample(g, [](double x) { return x * x; });
    const VectorField d = gradient(f, g);
    for (std::size_t i = 0; i < g.n; ++i) EXPECT_NEAR(d[i], 2.0 * g.x(i), 1e-12) << "node " << i;
}

TEST(Gradient, RejectsNonFinite)
{
    const Grid1D g = make_grid(0, 1, 11);
    std::vector<double> f(g.n, 1.0);
    f[3] = std::nan("");
    EXPECT_ERROR_KIND(gradient(f, g), ErrorKind::invalid_argument);
}

TEST(Gradient, SecondOrderConvergence)
{
    auto err = [](std::size_t n) {
        const Grid1D g = make_grid(0, 2, n);
        const VectorField d = gradient(sample(g, [](double x) { return std::sin(3.0 * x); }), g);
        double worst = 0.0;
        for (std::size_t i = 0; i < g.n; ++i) worst = std::max(worst, std::abs(d[i] - 3.0 * std::cos(3.0 * g.x(i))));
        return worst;
    };
    const double ratio = err(101) / err(201);
    EXPECT_GE(ratio, 3.5);
    EXPECT_LE(ratio, 4.5);
}

TEST(DivergenceFlux, ZeroFluxGivesZero)
{
    const Grid1D g = make_grid(0, 1, 11);
    for (double v : divergence_flux(VectorField{g, std::vector<double>(g.n, 0.0)})) EXPECT_EQ(v, 0.0);
}

TEST(DivergenceFlux, ConservesMassForAnyFlux)
{
    const Grid1D g = make_grid(-3, 5, 97);
    const VectorField J{g, sample(g, [](double x) { return std::exp(0.3 * x) * std::cos(5.0 * x) + 2.0; })};
    EXPECT_LE(std::abs(integrate(divergence_flux(J), g)), 1e-12);
}

TEST(DivergenceFlux, LinearFluxInterior)
{
    const Grid1D g = make_grid(-1, 1, 41);
    const auto d = divergence_flux(VectorField{g, g.nodes()});
    // Nodes next to the ends see the zero-flux closure.
    for (std::size_t i = 3; i + 3 < g.n; ++i) EXPECT_NEAR(d[i], 1.0, g.dx * g.dx) << "node " << i;
}

TEST(DivergenceFlux, IntegrationByParts)
{
    const Grid1D g = make_grid(-2, 2, 201);
    const auto f = sample(g, [](double x) { return std::sin(x) + x * x; });
    const auto J = VectorField{g, sample(g, [](double x) { return (4.0 - x * x) * std::exp(x); })};
    const VectorField df = gradient(f, g);
    const auto div = divergence_flux(J);
    std::vector<double> a(g.n), b(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        a[i] = df[i] * J[i];
        b[i] = f[i] * div[i];
    }
    EXPECT_LE(std::abs(integrate(a, g) + integrate(b, g)), 1e-10);
}

TEST(Integrate, Constant)
{
    const Grid1D g = make_grid(0, 1, 11);
    EXPECT_NEAR(integrate(std::vector<double>(g.n, 1.0), g), 1.0, 1e-15);
}

TEST(Integrate, LinearIsExact)
{
    const Grid1D g = make_grid(0, 1, 11);
    EXPECT_NEAR(integrate(g.nodes(), g), 0.5, 1e-15);
}

TEST(Integrate, StandardGaussian)
{
    const Grid1D g = make_grid(-8, 8, 401);
    EXPECT_NEAR(integrate(sample(g, [](double x) { return oracle::gauss_pdf(x, 0, 1); }), g), 1.0, 1e-10);
}

TEST(Normalize, ScalesToUnitMass)
{
    const Grid1D g = make_grid(0, 1, 11);
    for (double v : normalize(std::vector<double>(g.n, 2.0), g).values) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(Normalize, Idempotent)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityField a = densities::gaussian(g, 0.3, 1.2);
    EXPECT_LE(oracle::max_abs_diff(normalize(a.values, g).values, a.values), 1e-12);
}

TEST(Normalize, RejectsZeroAndNegativeMass)
{
    const Grid1D g = make_grid(0, 1, 11);
    EXPECT_ERROR_KIND(normalize(std::vector<double>(g.n, 0.0), g), ErrorKind::degenerate_density);
    EXPECT_ERROR_KIND(normalize(std::vector<double>(g.n, -1.0), g), ErrorKind::degenerate_density);
}

TEST(Densities, TailContainment)
{
    const Grid1D g = make_grid(-8, 8, 401);
    EXPECT_TRUE(tails_contained(densities::gaussian(g, 0, 1)));
    EXPECT_FALSE(tails_contained(densities::gaussian(g, 6, 1)));
}

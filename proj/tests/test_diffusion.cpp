#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "entroflow/densities.hpp"
#include "entroflow/diffusion.hpp"
#include "entroflow/functionals.hpp"
#include "support/oracles.hpp"
#include "support/testing.hpp"

using namespace entroflow;

namespace {

const DiffusionSpec kOu = DiffusionSpec::ornstein_uhlenbeck(1.0, 0.0, 2.0);
const DiffusionSpec kHeat = DiffusionSpec::heat(2.0);

std::vector<VectorField> current_velocities(const DiffusionSpec& spec, const DensityFlow& flow)
{
    std::vector<VectorField> v;
    for (std::size_t k = 0; k < flow.frames.size(); ++k) v.push_back(nelson_frame(spec, flow.frames[k], flow.time(k)).v_current);
    return v;
}

}  // namespace

TEST(FpSolve, BoltzmannIsStationary)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityField rho0 = densities::gaussian(g, 0, 1);
    const DensityFlow flow = fp_solve(kOu, rho0, 0.0, 1.0, 1e-4, 100);
    for (const DensityField& f : flow.frames) EXPECT_LE(oracle::max_abs_diff(f.values, rho0.values), 1e-6);
}

TEST(FpSolve, OuMoments)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityFlow flow = fp_solve(kOu, densities::gaussian(g, 2.0, 0.25), 0.0, 3.0, 1e-4, 1000);
    for (std::size_t k = 0; k < flow.frames.size(); ++k) {
        const auto m = oracle::node_moments(g, flow.frames[k].values);
        const auto ref = oracle::ou_moments(2.0, 0.25, 1.0, 0.0, 2.0, flow.time(k));
        EXPECT_NEAR(m.mean, ref.mean, 1e-3) << "t = " << flow.time(k);
        EXPECT_NEAR(m.variance, ref.variance, 1e-3) << "t = " << flow.time(k);
    }
}

TEST(FpSolve, HeatVarianceGrowth)
{
    const Grid1D g = make_grid(-12, 12, 601);
    const DensityFlow flow = fp_solve(kHeat, densities::gaussian(g, 0, 1), 0.0, 2.0, 1e-3, 100);
    for (std::size_t k = 0; k < flow.frames.size(); ++k)
        EXPECT_NEAR(oracle::node_moments(g, flow.frames[k].values).variance,
                    oracle::heat_variance(1.0, 2.0, flow.time(k)), 1e-3);
}

TEST(FpSolve, MassAndPositivity)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityFlow flow = fp_solve(kOu, densities::mixture(g, {{1, -3, 0.2}, {1, 2, 0.5}}), 0.0, 2.0, 1e-4, 100);
    for (const DensityField& f : flow.frames) {
        EXPECT_NEAR(mass(f), 1.0, tolerances::mass);
        for (double v : f.values) EXPECT_GE(v, 0.0);
    }
}

TEST(FpSolve, RejectsStepAboveStabilityBound)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const double bound = stability_bound(kOu, g, 0.0, 1.0);
    // The advective limit dx / (2 max|b|) caps the bound; positivity of the explicit half may lower it.
    EXPECT_LE(bound, 0.04 / 16.0 * (1.0 + 1e-12));
    EXPECT_GT(bound, 1e-3);
    const DensityField rho = densities::gaussian(g, 0, 1);
    EXPECT_NO_THROW(fp_solve(kOu, rho, 0.0, 2.0 * bound, bound));
    EXPECT_ERROR_KIND(fp_solve(kOu, rho, 0.0, 2.02 * bound, 1.01 * bound), ErrorKind::invalid_argument);
    EXPECT_ERROR_KIND(fp_solve(kOu, rho, 0.0, 1.0, 0.01), ErrorKind::invalid_argument);
}

TEST(FpSolve, RejectsBadWindow)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityField rho = densities::gaussian(g, 0, 1);
    EXPECT_ERROR_KIND(fp_solve(kOu, rho, 1.0, 0.0, 1e-4), ErrorKind::invalid_argument);
    EXPECT_ERROR_KIND(fp_solve(kOu, rho, 0.0, 1.0, 0.0), ErrorKind::invalid_argument);
    EXPECT_ERROR_KIND(fp_solve(kOu, rho, 0.0, 1.0, 3e-4), ErrorKind::invalid_argument);
    EXPECT_ERROR_KIND(fp_solve(kOu, rho, 0.0, 1.0, 1e-4, 3), ErrorKind::invalid_argument);
}

TEST(FpSolve, Deterministic)
{
    const Grid1D g = make_grid(-8, 8, 201);
    const DensityField rho = densities::gaussian(g, 1, 0.5);
    const DensityFlow a = fp_solve(kOu, rho, 0.0, 0.5, 1e-3, 10);
    const DensityFlow b = fp_solve(kOu, rho, 0.0, 0.5, 1e-3, 10);
    for (std::size_t k = 0; k < a.frames.size(); ++k) EXPECT_EQ(a.frames[k].values, b.frames[k].values);
}

TEST(NelsonFrame, StationaryOu)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const KinematicsFrame k = nelson_frame(kOu, densities::gaussian(g, 0, 1), 0.0);
    for (std::size_t i = 0; i < g.n; ++i) {
        if (std::abs(g.x(i)) > 4.0) continue;
        EXPECT_NEAR(k.b_minus[i], g.x(i), 1e-6);
        EXPECT_NEAR(k.v_current[i], 0.0, 1e-6);
    }
}

TEST(NelsonFrame, UniformDensityHasNoOsmoticDrift)
{
    const Grid1D g = make_grid(0, 1, 51);
    const KinematicsFrame k = nelson_frame(kOu, densities::uniform(g, 0, 1), 0.0);
    for (std::size_t i = 0; i < g.n; ++i) {
        EXPECT_NEAR(k.b_minus[i], k.b_plus[i], 1e-12);
        EXPECT_NEAR(k.u_osmotic[i], 0.0, 1e-12);
    }
}

TEST(NelsonFrame, DefinitionConsistency)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityField rho = densities::mixture(g, {{1, -2, 0.4}, {2, 1, 1.0}});
    const KinematicsFrame k = nelson_frame(kOu, rho, 0.3);
    const VectorField score = gradient(floored_log(rho.values), g);
    for (std::size_t i = 0; i < g.n; ++i) {
        EXPECT_LE(std::abs(0.5 * (k.b_plus[i] + k.b_minus[i]) - k.v_current[i]), 1e-12);
        EXPECT_LE(std::abs(k.b_plus[i] - k.b_minus[i] - kOu.sigma2 * score[i]), tolerances::nelson_duality);
        EXPECT_NEAR(k.v_current[i], k.b_plus[i] - 0.5 * kOu.sigma2 * score[i], 1e-12);
    }
}

TEST(ContinuityResidual, ConstantFlowZeroVelocity)
{
    const Grid1D g = make_grid(-8, 8, 201);
    const DensityField rho = densities::gaussian(g, 0, 1);
    const DensityFlow flow{g, 0.0, 0.1, {rho, rho, rho, rho}};
    EXPECT_EQ(continuity_residual(flow, std::vector<VectorField>(4, VectorField{g, std::vector<double>(g.n, 0.0)})), 0.0);
}

TEST(ContinuityResidual, CountMismatch)
{
    const Grid1D g = make_grid(-8, 8, 201);
    const DensityField rho = densities::gaussian(g, 0, 1);
    const DensityFlow flow{g, 0.0, 0.1, {rho, rho, rho}};
    EXPECT_ERROR_KIND(continuity_residual(flow, {VectorField{g, std::vector<double>(g.n, 0.0)}}),
                      ErrorKind::invalid_argument);
}

TEST(ContinuityResidual, CurrentVelocityClosesTheEquation)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityFlow flow = fp_solve(kOu, densities::gaussian(g, 2.0, 1.0), 0.0, 0.2, 1e-4);
    EXPECT_LE(continuity_residual(flow, current_velocities(kOu, flow)), tolerances::continuity_residual);
}

TEST(ContinuityResidual, OsmoticTermIsRequired)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityFlow flow = fp_solve(kHeat, densities::gaussian(g, 0, 1), 0.0, 0.2, 1e-4);
    std::vector<VectorField> wrong;
    for (std::size_t k = 0; k < flow.frames.size(); ++k)
        wrong.push_back(nelson_frame(kHeat, flow.frames[k], flow.time(k)).b_plus);
    const double right = continuity_residual(flow, current_velocities(kHeat, flow));
    EXPECT_GT(continuity_residual(flow, wrong), 10.0 * right);
}

TEST(BackwardFp, StationaryOu)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityFlow flow = fp_solve(kOu, densities::gaussian(g, 0, 1), 0.0, 0.1, 1e-4, 10);
    EXPECT_LE(backward_fp_residual(flow, kOu), 1e-6);
}

TEST(BackwardFp, OuAndHeatFlows)
{
    const Grid1D g = make_grid(-8, 8, 401);
    EXPECT_LE(backward_fp_residual(fp_solve(kOu, densities::gaussian(g, 2.0, 1.0), 0.0, 0.5, 1e-4), kOu),
              tolerances::backward_fp_residual);
    EXPECT_LE(backward_fp_residual(fp_solve(kHeat, densities::gaussian(g, 0, 1), 0.0, 0.5, 1e-4), kHeat),
              tolerances::backward_fp_residual);
}

// A narrow start N(2, 0.25) needs (dx/σ)² well below the tolerance: the residual is
// second order in dx and meets 1e-3 once dx = 0.01.
TEST(BackwardFp, NarrowOuStartConvergesAtSecondOrder)
{
    auto residuals = [](std::size_t n) {
        const Grid1D g = make_grid(-8, 8, n);
        const DensityFlow flow = fp_solve(kOu, densities::gaussian(g, 2.0, 0.25), 0.0, 0.002, 5e-5);
        return std::pair{backward_fp_residual(flow, kOu), continuity_residual(flow, current_velocities(kOu, flow))};
    };
    const auto [b401, c401] = residuals(401);
    const auto [b801, c801] = residuals(801);
    const auto [b1601, c1601] = residuals(1601);
    EXPECT_GE(b401 / b801, 3.5);
    EXPECT_LE(b401 / b801, 4.5);
    EXPECT_GE(c401 / c801, 3.5);
    EXPECT_LE(c401 / c801, 4.5);
    EXPECT_LE(b1601, tolerances::backward_fp_residual);
    EXPECT_LE(c1601, tolerances::continuity_residual);
}

TEST(HarmonicSolve, ConstantsAreHarmonic)
{
    const Grid1D g = make_grid(-8, 8, 401);
    for (const auto& phi : harmonic_solve(kOu, g, std::vector<double>(g.n, 1.0), 0.0, 0.5, 1e-3))
        for (double v : phi) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(HarmonicSolve, Linearity)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const auto phi1 = sample(g, [](double x) { return 1.0 + 0.5 * std::sin(x); });
    std::vector<double> twice(phi1);
    for (double& v : twice) v *= 2.0;
    const auto a = harmonic_solve(kOu, g, phi1, 0.0, 0.5, 1e-3);
    const auto b = harmonic_solve(kOu, g, twice, 0.0, 0.5, 1e-3);
    for (std::size_t k = 0; k < a.size(); ++k)
        for (std::size_t i = 0; i < g.n; ++i) EXPECT_NEAR(b[k][i], 2.0 * a[k][i], 1e-12);
}

TEST(HarmonicSolve, TerminalFrameAndBackwardHeatKernel)
{
    const Grid1D g = make_grid(-10, 10, 501);
    const auto phi1 = sample(g, [](double x) { return oracle::gauss_pdf(x, 0.5, 1.0); });
    const auto phi = harmonic_solve(kHeat, g, phi1, 0.0, 1.0, 1e-3);
    EXPECT_EQ(phi.back(), phi1);
    for (std::size_t k : {std::size_t{0}, std::size_t{500}}) {
        const double t = 1e-3 * static_cast<double>(k);
        for (std::size_t i = 0; i < g.n; ++i)
            EXPECT_NEAR(phi[k][i], oracle::gauss_pdf(g.x(i), 0.5, 1.0 + 2.0 * (1.0 - t)), 1e-3);
    }
}

TEST(HarmonicSolve, RejectsNonPositiveTerminalData)
{
    const Grid1D g = make_grid(-8, 8, 101);
    std::vector<double> phi1(g.n, 1.0);
    phi1[10] = 0.0;
    EXPECT_ERROR_KIND(harmonic_solve(kOu, g, phi1, 0.0, 1.0, 1e-3), ErrorKind::invalid_argument);
}

TEST(HarmonicSolve, MartingaleAlongThePrior)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityFlow flow = fp_solve(kOu, densities::gaussian(g, 1.0, 0.5), 0.0, 0.5, 1e-4);
    const auto phi = harmonic_solve(kOu, g, sample(g, [](double x) { return std::exp(0.3 * x) + 0.2; }), 0.0, 0.5,
                                    1e-4);
    ASSERT_EQ(phi.size(), flow.frames.size());
    auto pairing = [&](std::size_t k) {
        std::vector<double> f(g.n);
        for (std::size_t i = 0; i < g.n; ++i) f[i] = phi[k][i] * flow.frames[k][i];
        return integrate(f, g);
    };
    const double ref = pairing(0);
    for (std::size_t k = 0; k < phi.size(); k += 250) EXPECT_NEAR(pairing(k), ref, tolerances::martingale);
}

TEST(Relaxation, MonotoneDecayAndBoltzmannLimit)
{
    const Grid1D g = make_grid(-8, 8, 401);
    const DensityField bar = densities::gaussian(g, 0, 1);
    const DensityFlow flow = fp_solve(kOu, densities::gaussian(g, 2.0, 0.25), 0.0, 8.0, 1e-4, 10);
    std::vector<double> D;
    for (const DensityField& f : flow.frames) D.push_back(relative_entropy(f, bar));
    for (std::size_t k = 1; k < D.size(); ++k) EXPECT_LE(D[k] - D[k - 1], tolerances::monotone_step);
    EXPECT_LE(D.back(), tolerances::boltzmann_limit);

    // dD/dt = -(σ²/2) I(ρ_t || ρ̄) while D is not negligible.
    for (std::size_t k = 1; k + 1 < D.size(); ++k) {
        if (D[k] < tolerances::dissipation_min_D) continue;
        const double measured = (D[k + 1] - D[k - 1]) / (2.0 * flow.dt);
        const double predicted = -relative_fisher(flow.frames[k], bar);
        EXPECT_LE(std::abs(predicted - measured) / std::abs(measured), tolerances::dissipation_rate) << "frame " << k;
    }
}

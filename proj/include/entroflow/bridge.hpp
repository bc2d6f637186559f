#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "entroflow/diffusion.hpp"
#include "entroflow/functionals.hpp"
#include "entroflow/grid.hpp"

namespace entroflow {

namespace tolerances {
inline constexpr double factorization = 1e-6;
inline constexpr double martingale_normalization = 1e-6;
inline constexpr double terminal_marginal = 1e-6;
inline constexpr double terminal_entropy = 1e-4;
inline constexpr double bridge_consistency = 1e-3;
inline constexpr double bridge_rate = 0.01;
inline constexpr double entropy_monotone = 1e-10;
inline constexpr double ptcontr_rate = 0.01;
inline constexpr double ptcontr_reduction = 1e-14;
inline constexpr double same_backward_drift = 1e-3;
inline constexpr double infeasible_ratio = 1e12;
inline constexpr double infeasible_target_mass = 1e-10;
inline constexpr double kernel_row_sum = 1e-10;
inline constexpr double fortet_tol = 1e-8;
inline constexpr std::size_t fortet_max_iter = 100000;
inline constexpr std::size_t fortet_history_stride = 100;
inline constexpr double interpolation_mass = 1e-6;
inline constexpr double endpoint_marginal = 2.0 * fortet_tol;
inline constexpr double fortet_monotone = 0.0;
inline constexpr double rate_abs_floor = 1e-6;
}  // namespace tolerances

/// Feedback control u(x, t) added to the prior drift.
struct ControlField {
    std::function<double(double x, double t)> u;

    double operator()(double x, double t) const { return u(x, t); }

    static ControlField zero()
    {
        return {[](double, double) { return 0.0; }};
    }

    /// σ² ∂x log φ for φ given on grid frames at t0 + k*dt: log φ is interpolated
    /// piecewise-linearly in x and linearly in t. At face midpoints this is the
    /// one-sided difference; at nodes it is the average of the two neighbouring slopes.
    static ControlField from_harmonic(const Grid1D& g, double t0, double dt,
                                      const std::vector<std::vector<double>>& phi, double sigma2)
    {
        if (phi.empty()) fail(ErrorKind::invalid_argument, "from_harmonic: no frames");
        std::vector<std::vector<double>> slopes;
        slopes.reserve(phi.size());
        for (const auto& f : phi) {
            detail::require_size(f, g, "from_harmonic");
            const std::vector<double> lf = floored_log(f);
            std::vector<double> s(g.n - 1);
            for (std::size_t i = 0; i + 1 < g.n; ++i) s[i] = (lf[i + 1] - lf[i]) / g.dx;
            slopes.push_back(std::move(s));
        }
        auto shared = std::make_shared<const std::vector<std::vector<double>>>(std::move(slopes));
        return {[g, t0, dt, sigma2, shared](double x, double t) {
            const auto& S = *shared;
            auto at_frame = [&](const std::vector<double>& s) {
                const double p = std::clamp((x - g.x_min) / g.dx, 0.0, static_cast<double>(g.n - 1));
                const double r = std::round(p);
                if (std::abs(p - r) < 1e-9) {
                    const auto i = static_cast<std::size_t>(r);
                    if (i == 0) return s.front();
                    if (i == g.n - 1) return s.back();
                    return 0.5 * (s[i - 1] + s[i]);
                }
                return s[std::min(static_cast<std::size_t>(p), g.n - 2)];
            };
            const double q = std::clamp((t - t0) / dt, 0.0, static_cast<double>(S.size() - 1));
            const auto k = std::min(static_cast<std::size_t>(q), S.size() - 1);
            const double a = q - static_cast<double>(k);
            double slope = at_frame(S[k]);
            if (a > 1e-12 && k + 1 < S.size()) slope = (1.0 - a) * slope + a * at_frame(S[k + 1]);
            return sigma2 * slope;
        }};
    }
};

/// Solution of a half bridge: the controlled flow factors as prior frame × φ frame.
struct BridgeSolution {
    std::vector<std::vector<double>> phi;
    DensityFlow controlled_flow;
    ControlField control;
    DensityFlow prior_flow;
};

/// Static Schrödinger system diag(φ̂0) K diag(φ1) for a row-stochastic prior kernel K.
struct SchroedingerSystem {
    std::vector<double> phi0_hat;
    std::vector<double> phi1;
    Eigen::MatrixXd kernel;
    std::size_t iterations = 0;
    double residual = 0.0;
    /// Marginal residual every fortet_history_stride iterations (and at the last one).
    std::vector<double> residual_history;

    Eigen::MatrixXd coupling() const
    {
        const Eigen::Map<const Eigen::VectorXd> a(phi0_hat.data(), static_cast<Eigen::Index>(phi0_hat.size()));
        const Eigen::Map<const Eigen::VectorXd> b(phi1.data(), static_cast<Eigen::Index>(phi1.size()));
        return a.asDiagonal() * kernel * b.asDiagonal();
    }
};

/// Fokker-Planck flow with drift b+ + u.
inline DensityFlow controlled_fp_solve(const DiffusionSpec& spec, const ControlField& u, const DensityField& rho0,
                                       double t0, double t1, double dt, std::size_t stride = 1)
{
    if (!u.u) fail(ErrorKind::invalid_argument, "controlled_fp_solve: empty control");
    DiffusionSpec controlled{[b = spec.b_plus, c = u.u](double x, double t) { return b(x, t) + c(x, t); },
                             spec.sigma2, false};
    return fp_solve(controlled, rho0, t0, t1, dt, stride);
}

/// d/dt D(ρ^u || ρ) = ∫ ∇log(ρ^u/ρ)·(u - (σ²/2) ∇log(ρ^u/ρ)) ρ^u.
inline double ptcontr_rate(const DensityField& rho_u, const DensityField& rho, const VectorField& u_field,
                           double sigma2)
{
    detail::require_same_grid(u_field.grid, rho.grid, "ptcontr_rate");
    const VectorField s = score_difference(rho_u, rho);
    std::vector<double> f(rho.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = s[i] * (u_field[i] - 0.5 * sigma2 * s[i]) * rho_u[i];
    return integrate(f, rho.grid);
}

namespace detail {

inline std::size_t frame_stride(const DensityFlow& flow, double dt)
{
    if (!(dt > 0.0)) fail(ErrorKind::invalid_argument, "dt must be positive");
    const double ratio = flow.dt / dt;
    const auto s = static_cast<std::size_t>(std::llround(ratio));
    if (s == 0 || std::abs(ratio - static_cast<double>(s)) > 1e-6)
        fail(ErrorKind::invalid_argument, "solver dt must divide the frame spacing of the prior flow");
    return s;
}

inline void require_flow(const DensityFlow& flow, const char* what)
{
    if (flow.frames.size() < 2) fail(ErrorKind::invalid_argument, std::string(what) + ": prior flow needs two frames");
}

}  // namespace detail

/// Only the initial marginal is constrained: the optimal control is zero and the
/// new flow is the prior dynamics started from rho0_new. dt is the solver step used
/// for the prior flow (defaults to its frame spacing).
inline BridgeSolution half_bridge_initial(const DiffusionSpec& spec, const DensityFlow& prior_flow,
                                          const DensityField& rho0_new, double dt = 0.0)
{
    detail::require_flow(prior_flow, "half_bridge_initial");
    detail::require_same_grid(rho0_new.grid, prior_flow.grid, "half_bridge_initial");
    if (dt == 0.0) dt = prior_flow.dt;
    const std::size_t stride = detail::frame_stride(prior_flow, dt);
    BridgeSolution sol{{}, fp_solve(spec, rho0_new, prior_flow.t0, prior_flow.t_end(), dt, stride),
                       ControlField::zero(), prior_flow};
    sol.phi.assign(prior_flow.frames.size(), std::vector<double>(prior_flow.grid.n, 1.0));
    return sol;
}

/// Only the final marginal is constrained: φ(t1) = ρ1 / ρ_{t1}, marched back with the
/// adjoint of the prior scheme, ρ^φ = ρ φ, and u* = σ² ∇log φ.
inline BridgeSolution half_bridge_final(const DiffusionSpec& spec, const DensityFlow& prior_flow,
                                        const DensityField& rho1_target, double dt = 0.0)
{
    detail::require_flow(prior_flow, "half_bridge_final");
    detail::require_same_grid(rho1_target.grid, prior_flow.grid, "half_bridge_final");
    if (dt == 0.0) dt = prior_flow.dt;
    const std::size_t stride = detail::frame_stride(prior_flow, dt);
    const Grid1D& g = prior_flow.grid;
    const DensityField& rho_end = prior_flow.frames.back();

    std::vector<double> phi1(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        const double ratio = rho1_target[i] / std::max(rho_end[i], kDensityFloor);
        if (rho1_target[i] > tolerances::infeasible_target_mass && ratio > tolerances::infeasible_ratio)
            fail(ErrorKind::infeasible_target, "target/prior ratio " + format_real(ratio) + " at x = " +
                                                   format_real(g.x(i)) + " exceeds " +
                                                   format_real(tolerances::infeasible_ratio));
        phi1[i] = ratio;
    }

    const std::vector<std::vector<double>> all =
        harmonic_solve(spec, g, phi1, prior_flow.t0, prior_flow.t_end(), dt);
    BridgeSolution sol{{}, DensityFlow{g, prior_flow.t0, prior_flow.dt, {}}, ControlField::zero(), prior_flow};
    for (std::size_t k = 0; k < prior_flow.frames.size(); ++k) {
        sol.phi.push_back(all[k * stride]);
        std::vector<double> f(g.n);
        for (std::size_t i = 0; i < g.n; ++i) f[i] = prior_flow.frames[k][i] * sol.phi[k][i];
        sol.controlled_flow.frames.push_back(DensityField{g, std::move(f)});
    }
    sol.control = ControlField::from_harmonic(g, prior_flow.t0, dt, all, spec.sigma2);
    return sol;
}

/// d/dt D(ρ^φ_t || ρ_t) = (σ²/2) ∫ |∇log φ|² ρ^φ at one stored frame.
inline double bridge_entropy_rate(const BridgeSolution& sol, std::size_t frame, double sigma2)
{
    if (frame >= sol.phi.size()) fail(ErrorKind::invalid_argument, "bridge_entropy_rate: frame out of range");
    const Grid1D& g = sol.controlled_flow.grid;
    const VectorField s = gradient(floored_log(sol.phi[frame]), g);
    std::vector<double> f(g.n);
    for (std::size_t i = 0; i < g.n; ++i) f[i] = s[i] * s[i] * sol.controlled_flow.frames[frame][i];
    return 0.5 * sigma2 * integrate(f, g);
}

/// Row-stochastic transition matrix of the discretized prior over [t0, t1]:
/// K(i, j) is the mass that a unit mass at node i sends to node j. Column j is the
/// harmonic function with terminal data e_j.
inline Eigen::MatrixXd prior_kernel(const DiffusionSpec& spec, const Grid1D& g, double t0, double t1, double dt)
{
    const std::size_t steps = detail::step_count(t0, t1, dt);
    const detail::CrankNicolsonPropagator prop(spec, g, dt);
    std::vector<std::vector<double>> columns(g.n, std::vector<double>(g.n, 0.0));
    for (std::size_t j = 0; j < g.n; ++j) columns[j][j] = 1.0;
    prop.march_backward(columns, t0, steps, [](std::size_t, std::vector<std::vector<double>>&) {});
    Eigen::MatrixXd K(g.n, g.n);
    for (std::size_t j = 0; j < g.n; ++j)
        for (std::size_t i = 0; i < g.n; ++i) K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            std::max(columns[j][i], 0.0);
    return K;
}

namespace detail {

inline void require_masses(const std::vector<double>& p, std::size_t n, const char* what)
{
    if (p.size() != n) fail(ErrorKind::invalid_argument, std::string(what) + ": size does not match the kernel");
    for (double v : p)
        if (!(v > 0.0) || !std::isfinite(v))
            fail(ErrorKind::invalid_argument, std::string(what) + ": node masses must be strictly positive");
}

inline double l1_gap(const Eigen::VectorXd& a, const std::vector<double>& b)
{
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += std::abs(a(i) - b[static_cast<std::size_t>(i)]);
    return s;
}

}  // namespace detail

/// Iterative proportional fitting φ̂0 ← p0 / (K φ1), φ1 ← p1 / (Kᵀ φ̂0), stopped when the
/// larger of the two marginal L1 errors is at most tol.
inline SchroedingerSystem fortet_solve(const Eigen::MatrixXd& kernel, const std::vector<double>& p0,
                                       const std::vector<double>& p1, double tol = tolerances::fortet_tol,
                                       std::size_t max_iter = tolerances::fortet_max_iter)
{
    const auto n = static_cast<std::size_t>(kernel.rows());
    if (kernel.cols() != kernel.rows()) fail(ErrorKind::invalid_argument, "fortet_solve: kernel must be square");
    detail::require_masses(p0, n, "fortet_solve p0");
    detail::require_masses(p1, n, "fortet_solve p1");
    const auto N = static_cast<Eigen::Index>(n);

    SchroedingerSystem sys{std::vector<double>(n, 1.0), std::vector<double>(n, 1.0), kernel, 0, 0.0, {}};
    Eigen::Map<Eigen::VectorXd> a(sys.phi0_hat.data(), N);
    Eigen::Map<Eigen::VectorXd> b(sys.phi1.data(), N);
    Eigen::VectorXd Kb(N), Kta(N);
    for (std::size_t it = 1; it <= max_iter; ++it) {
        Kb.noalias() = kernel * b;
        for (Eigen::Index i = 0; i < N; ++i) a(i) = p0[static_cast<std::size_t>(i)] / Kb(i);
        Kta.noalias() = kernel.transpose() * a;
        for (Eigen::Index j = 0; j < N; ++j) b(j) = p1[static_cast<std::size_t>(j)] / Kta(j);
        if (!a.allFinite() || !b.allFinite())
            fail(ErrorKind::no_convergence, "fortet_solve: scalings left the floating-point range after " +
                                                std::to_string(it) + " iterations");

        Kb.noalias() = kernel * b;
        Kta.noalias() = kernel.transpose() * a;
        sys.residual = std::max(detail::l1_gap(a.cwiseProduct(Kb), p0), detail::l1_gap(b.cwiseProduct(Kta), p1));
        sys.iterations = it;
        const bool done = sys.residual <= tol;
        if (it % tolerances::fortet_history_stride == 0 || done || it == max_iter)
            sys.residual_history.push_back(sys.residual);
        if (done) return sys;
    }
    fail(ErrorKind::no_convergence, "fortet_solve: marginal residual " + format_real(sys.residual) + " after " +
                                        std::to_string(max_iter) + " iterations");
}

/// Entropic interpolation frames together with the harmonic factor φ at the same times.
struct EntropicInterpolation {
    DensityFlow flow;
    std::vector<std::vector<double>> phi;
};

/// ρ*_t = φ̂_t φ_t / w: φ̂ carries the masses φ̂0 forward with the prior scheme and φ is
/// the harmonic function with terminal data φ1. dt and the grid must be those used to
/// build the kernel; frames are stored every `stride` steps.
inline EntropicInterpolation entropic_interpolation(const SchroedingerSystem& sys, const DiffusionSpec& spec,
                                                    const Grid1D& g, double t0, double t1, double dt,
                                                    std::size_t stride = 1)
{
    detail::require_size(sys.phi0_hat, g, "entropic_interpolation");
    detail::require_size(sys.phi1, g, "entropic_interpolation");
    if (stride == 0) fail(ErrorKind::invalid_argument, "stride must be positive");
    const std::size_t steps = detail::step_count(t0, t1, dt);
    if (steps % stride != 0) fail(ErrorKind::invalid_argument, "stride must divide the number of steps");
    const detail::CrankNicolsonPropagator prop(spec, g, dt);
    const std::vector<double>& w = prop.weights();
    const std::size_t frames = steps / stride + 1;

    std::vector<std::vector<double>> forward;
    forward.reserve(frames);
    std::vector<double> f(g.n);
    for (std::size_t i = 0; i < g.n; ++i) f[i] = sys.phi0_hat[i] / w[i];
    prop.march_forward(f, t0, steps, [&](std::size_t k, std::vector<double>& state) {
        if (k > 0) detail::check_positive_after_step(state, t0 + static_cast<double>(k) * dt, "entropic_interpolation");
        if (k % stride == 0) forward.push_back(state);
    });

    EntropicInterpolation out{DensityFlow{g, t0, dt * static_cast<double>(stride), std::vector<DensityField>(frames)},
                              std::vector<std::vector<double>>(frames)};
    std::vector<std::vector<double>> phi{sys.phi1};
    prop.march_backward(phi, t0, steps, [&](std::size_t k, std::vector<std::vector<double>>& state) {
        if (k % stride != 0) return;
        if (k < steps) detail::check_positive_after_step(state[0], t0 + static_cast<double>(k) * dt, "entropic_interpolation");
        std::vector<double> r(g.n);
        for (std::size_t i = 0; i < g.n; ++i) r[i] = forward[k / stride][i] * state[0][i];
        out.flow.frames[k / stride] = DensityField{g, std::move(r)};
        out.phi[k / stride] = state[0];
    });
    return out;
}

inline DensityFlow bridge_interpolation(const SchroedingerSystem& sys, const DiffusionSpec& spec, const Grid1D& g,
                                        double t0, double t1, double dt, std::size_t stride = 1)
{
    return entropic_interpolation(sys, spec, g, t0, t1, dt, stride).flow;
}

}  // namespace entroflow

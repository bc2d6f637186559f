#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "entroflow/functionals.hpp"
#include "entroflow/grid.hpp"
#include "entroflow/tridiagonal.hpp"

namespace entroflow {

/// Prior diffusion dX = b+(X, t) dt + σ dW with constant σ².
struct DiffusionSpec {
    std::function<double(double x, double t)> b_plus;
    double sigma2 = 2.0;
    /// Drift independent of t; lets solvers reuse one factorization for every step.
    bool time_homogeneous = false;

    double diffusivity() const noexcept { return 0.5 * sigma2; }

    static DiffusionSpec ornstein_uhlenbeck(double stiffness, double center, double sigma2)
    {
        return {[stiffness, center](double x, double) { return -stiffness * (x - center); }, sigma2, true};
    }

    static DiffusionSpec heat(double sigma2)
    {
        return {[](double, double) { return 0.0; }, sigma2, true};
    }

    /// Gradient drift b+ = -H'(x) given H'; its stationary density is exp(-2H/σ²) / Z.
    static DiffusionSpec gradient_drift(std::function<double(double)> dH, double sigma2)
    {
        return {[dH = std::move(dH)](double x, double) { return -dH(x); }, sigma2, true};
    }
};

/// Forward and backward drifts of a Markovian finite-energy diffusion at one time,
/// with the current and osmotic velocities derived from them.
struct KinematicsFrame {
    DensityField rho;
    VectorField b_plus;
    VectorField b_minus;
    VectorField v_current;
    VectorField u_osmotic;
};

namespace tolerances {
inline constexpr double mass = 1e-10;
inline constexpr double positivity = 1e-12;
inline constexpr double boltzmann_fixed_point = 1e-6;
inline constexpr double nelson_duality = 1e-10;
inline constexpr double backward_fp_residual = 1e-3;
inline constexpr double continuity_residual = 1e-3;
inline constexpr double dissipation_rate = 0.01;
inline constexpr double dissipation_min_D = 1e-4;
inline constexpr double monotone_step = 1e-10;
inline constexpr double boltzmann_limit = 1e-3;
inline constexpr double martingale = 1e-6;
}  // namespace tolerances

namespace detail {

/// Bernoulli function z / (e^z - 1).
inline double bernoulli(double z) noexcept
{
    if (std::abs(z) < 1e-6) return 1.0 - 0.5 * z + z * z / 12.0;
    return z / std::expm1(z);
}

/// Exponentially fitted (Chang-Cooper / Scharfetter-Gummel) flux for
/// ∂ρ/∂t = -∂x(b ρ) + D ∂xx ρ on the node-centred control volumes of a grid.
/// The face flux is F = left * ρ_i - right * ρ_{i+1}, which vanishes exactly when
/// ρ_{i+1}/ρ_i = exp(b dx / D).
class ExponentialFitting {
public:
    ExponentialFitting(const DiffusionSpec& spec, const Grid1D& g) : spec_(spec), grid_(g)
    {
        if (!(spec.sigma2 > 0.0) || !std::isfinite(spec.sigma2))
            fail(ErrorKind::invalid_argument, "sigma2 must be positive and finite");
        if (!spec.b_plus) fail(ErrorKind::invalid_argument, "diffusion spec has no drift");
    }

    /// Generator A(t) such that d/dt (w ⊙ ρ) = A(t) ρ; columns sum to zero.
    Tridiagonal generator(double t) const
    {
        const std::size_t n = grid_.n;
        const double D = spec_.diffusivity();
        const double dx = grid_.dx;
        Tridiagonal A(n);
        for (std::size_t f = 0; f + 1 < n; ++f) {
            const double b = spec_.b_plus(grid_.x_min + (static_cast<double>(f) + 0.5) * dx, t);
            if (!std::isfinite(b)) fail(ErrorKind::invalid_argument, "drift is not finite on the grid");
            const double P = b * dx / D;
            const double left = D / dx * bernoulli(-P);
            const double right = D / dx * bernoulli(P);
            A.diag[f] -= left;
            A.upper[f] += right;
            A.lower[f + 1] += left;
            A.diag[f + 1] -= right;
        }
        return A;
    }

    double max_abs_drift(double t) const
    {
        double m = 0.0;
        for (std::size_t f = 0; f + 1 < grid_.n; ++f)
            m = std::max(m, std::abs(spec_.b_plus(grid_.x_min + (static_cast<double>(f) + 0.5) * grid_.dx, t)));
        return m;
    }

    const Grid1D& grid() const noexcept { return grid_; }

private:
    DiffusionSpec spec_;
    Grid1D grid_;
};

/// Largest dt for which the explicit half of a Crank-Nicolson step with generator A
/// keeps nonnegative coefficients.
inline double explicit_half_bound(const Tridiagonal& A, const std::vector<double>& w)
{
    double bound = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < w.size(); ++i)
        if (A.diag[i] < 0.0) bound = std::min(bound, 2.0 * w[i] / -A.diag[i]);
    return bound;
}

inline std::size_t step_count(double t0, double t1, double dt)
{
    if (!(t0 < t1) || !std::isfinite(t0) || !std::isfinite(t1))
        fail(ErrorKind::invalid_argument, "time window requires t0 < t1");
    if (!(dt > 0.0) || !std::isfinite(dt)) fail(ErrorKind::invalid_argument, "dt must be positive");
    const double steps = (t1 - t0) / dt;
    const auto k = static_cast<std::size_t>(std::llround(steps));
    if (k == 0 || std::abs(steps - static_cast<double>(k)) > 1e-6)
        fail(ErrorKind::invalid_argument, "dt must divide the time window into whole steps");
    return k;
}

/// One Crank-Nicolson step (W - dt/2 A(t+dt)) f' = (W + dt/2 A(t)) f, or its transpose.
struct StepOperators {
    Tridiagonal explicit_part;
    TridiagonalFactor implicit_factor;
};

/// Crank-Nicolson stepping of the exponentially fitted scheme together with its
/// exact discrete adjoint. Forward steps conserve Σ w_i f_i; the pairing
/// Σ w_i φ_i ρ_i is invariant when φ is stepped backward with the adjoint.
class CrankNicolsonPropagator {
public:
    CrankNicolsonPropagator(const DiffusionSpec& spec, const Grid1D& g, double dt)
        : fit_(spec, g), homogeneous_(spec.time_homogeneous), w_(g.weights()), dt_(dt)
    {
    }

    /// Bound on dt at time t: the advective limit dx / (2 max|b+|) and the
    /// positivity limit of the explicit half step.
    double stability_bound(double t) const
    {
        const double adv = fit_.max_abs_drift(t);
        const double advective = adv > 0.0 ? fit_.grid().dx / (2.0 * adv) : std::numeric_limits<double>::infinity();
        return std::min(advective, explicit_half_bound(fit_.generator(t), w_));
    }

    /// Forward steps over [t0, t0 + steps*dt]; observer(k, f) sees every state, k = 0..steps.
    template <class Observer>
    void march_forward(std::vector<double>& f, double t0, std::size_t steps, Observer&& observer) const
    {
        observer(std::size_t{0}, f);
        std::optional<StepOperators> cached;
        std::vector<double> rhs(f.size());
        for (std::size_t k = 0; k < steps; ++k) {
            const double t = t0 + static_cast<double>(k) * dt_;
            if (!cached || !homogeneous_) cached.emplace(operators(t, false));
            cached->explicit_part.multiply(f, rhs);
            cached->implicit_factor.solve_in_place(rhs);
            f.swap(rhs);
            observer(k + 1, f);
        }
    }

    /// Backward adjoint steps from t0 + steps*dt down to t0 applied to every
    /// column; observer(k, columns) sees the state at step k in decreasing k.
    template <class Observer>
    void march_backward(std::vector<std::vector<double>>& columns, double t0, std::size_t steps,
                        Observer&& observer) const
    {
        observer(steps, columns);
        std::optional<StepOperators> cached;
        std::vector<double> tmp(w_.size());
        for (std::size_t k = steps; k-- > 0;) {
            const double t = t0 + static_cast<double>(k) * dt_;
            if (!cached || !homogeneous_) cached.emplace(operators(t, true));
            for (auto& phi : columns) {
                // φ = W^{-1} (W + dt/2 A(t))^T (W - dt/2 A(t+dt))^{-T} W φ'
                for (std::size_t i = 0; i < w_.size(); ++i) tmp[i] = w_[i] * phi[i];
                cached->implicit_factor.solve_in_place(tmp);
                cached->explicit_part.multiply(tmp, phi);
                for (std::size_t i = 0; i < w_.size(); ++i) phi[i] /= w_[i];
            }
            observer(k, columns);
        }
    }

    double dt() const noexcept { return dt_; }
    const Grid1D& grid() const noexcept { return fit_.grid(); }
    const std::vector<double>& weights() const noexcept { return w_; }

private:
    Tridiagonal checked_generator(double t) const
    {
        Tridiagonal A = fit_.generator(t);
        const double adv = fit_.max_abs_drift(t);
        if (adv > 0.0 && dt_ > fit_.grid().dx / (2.0 * adv) * (1.0 + 1e-12))
            fail(ErrorKind::invalid_argument, "dt = " + format_real(dt_) + " exceeds the advective bound " +
                                                  format_real(fit_.grid().dx / (2.0 * adv)) + " at t = " +
                                                  format_real(t));
        const double pos = explicit_half_bound(A, w_);
        if (dt_ > pos * (1.0 + 1e-12))
            fail(ErrorKind::invalid_argument, "dt = " + format_real(dt_) + " exceeds the positivity bound " +
                                                  format_real(pos) + " at t = " + format_real(t));
        return A;
    }

    StepOperators operators(double t, bool adjoint) const
    {
        const Tridiagonal A0 = checked_generator(t);
        const Tridiagonal A1 = homogeneous_ ? A0 : checked_generator(t + dt_);
        const std::size_t n = w_.size();
        const double h = 0.5 * dt_;
        Tridiagonal lhs(n), rhs(n);
        for (std::size_t i = 0; i < n; ++i) {
            lhs.diag[i] = w_[i] - h * A1.diag[i];
            lhs.lower[i] = -h * A1.lower[i];
            lhs.upper[i] = -h * A1.upper[i];
            rhs.diag[i] = w_[i] + h * A0.diag[i];
            rhs.lower[i] = h * A0.lower[i];
            rhs.upper[i] = h * A0.upper[i];
        }
        if (adjoint) return {rhs.transposed(), TridiagonalFactor(lhs.transposed())};
        return {std::move(rhs), TridiagonalFactor(lhs)};
    }

    ExponentialFitting fit_;
    bool homogeneous_;
    std::vector<double> w_;
    double dt_;
};

inline void check_positive_after_step(std::vector<double>& f, double t, const char* what)
{
    for (double& v : f) {
        if (v < -tolerances::positivity)
            fail(ErrorKind::scheme_failure,
                 std::string(what) + ": negative value " + format_real(v) + " at t = " + format_real(t));
        if (v < 0.0) v = 0.0;
    }
}

}  // namespace detail

/// Largest admissible dt for fp_solve / harmonic_solve over [t0, t1]
/// (sampled at the ends and 15 interior times).
inline double stability_bound(const DiffusionSpec& spec, const Grid1D& g, double t0, double t1)
{
    const detail::CrankNicolsonPropagator prop(spec, g, 1.0);
    double bound = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 16; ++k) bound = std::min(bound, prop.stability_bound(t0 + (t1 - t0) * k / 16.0));
    return bound;
}

/// Fokker-Planck flow ∂ρ/∂t + ∇·(b+ ρ) - (σ²/2) Δρ = 0 from rho0 on [t0, t1].
/// Every `stride`-th step is stored; the flow's dt is stride * dt.
inline DensityFlow fp_solve(const DiffusionSpec& spec, const DensityField& rho0, double t0, double t1, double dt,
                            std::size_t stride = 1)
{
    if (stride == 0) fail(ErrorKind::invalid_argument, "stride must be positive");
    const std::size_t steps = detail::step_count(t0, t1, dt);
    if (steps % stride != 0) fail(ErrorKind::invalid_argument, "stride must divide the number of steps");
    const detail::CrankNicolsonPropagator prop(spec, rho0.grid, dt);

    DensityFlow flow{rho0.grid, t0, dt * static_cast<double>(stride), {}};
    flow.frames.reserve(steps / stride + 1);
    std::vector<double> f = rho0.values;
    prop.march_forward(f, t0, steps, [&](std::size_t k, std::vector<double>& state) {
        if (k > 0) detail::check_positive_after_step(state, t0 + static_cast<double>(k) * dt, "fp_solve");
        if (k % stride == 0) flow.frames.push_back(DensityField{rho0.grid, state});
    });
    return flow;
}

/// Space-time harmonic function for the prior: ∂φ/∂t + b+·∇φ + (σ²/2)Δφ = 0,
/// marched backward from phi1 at t1. Entry k is φ at t0 + k*dt.
inline std::vector<std::vector<double>> harmonic_solve(const DiffusionSpec& spec, const Grid1D& g,
                                                       std::span<const double> phi1, double t0, double t1,
                                                       double dt)
{
    detail::require_size(phi1, g, "harmonic_solve");
    for (double v : phi1)
        if (!(v > 0.0) || !std::isfinite(v))
            fail(ErrorKind::invalid_argument, "harmonic_solve: terminal data must be positive and finite");
    const std::size_t steps = detail::step_count(t0, t1, dt);
    const detail::CrankNicolsonPropagator prop(spec, g, dt);
    std::vector<std::vector<double>> frames(steps + 1);
    std::vector<std::vector<double>> phi{std::vector<double>(phi1.begin(), phi1.end())};
    prop.march_backward(phi, t0, steps, [&](std::size_t k, std::vector<std::vector<double>>& state) {
        if (k < steps) detail::check_positive_after_step(state[0], t0 + static_cast<double>(k) * dt, "harmonic_solve");
        frames[k] = state[0];
    });
    return frames;
}

/// Nelson kinematics at one time: b- from the duality b+ - b- = σ² ∇log ρ.
inline KinematicsFrame nelson_frame(const DiffusionSpec& spec, const DensityField& rho, double t)
{
    const Grid1D& g = rho.grid;
    const VectorField score = gradient(floored_log(rho.values), g);
    KinematicsFrame k{rho, VectorField{g, sample(g, [&](double x) { return spec.b_plus(x, t); })},
                      VectorField{g, std::vector<double>(g.n)}, VectorField{g, std::vector<double>(g.n)},
                      VectorField{g, std::vector<double>(g.n)}};
    for (std::size_t i = 0; i < g.n; ++i) {
        k.b_minus.values[i] = k.b_plus[i] - spec.sigma2 * score[i];
        k.v_current.values[i] = 0.5 * (k.b_plus[i] + k.b_minus[i]);
        k.u_osmotic.values[i] = 0.5 * (k.b_plus[i] - k.b_minus[i]);
    }
    return k;
}

/// Largest L1 norm over interior frames of ∂ρ/∂t + ∇·(vρ), with ∂ρ/∂t by centred differences.
inline double continuity_residual(const DensityFlow& flow, const std::vector<VectorField>& velocities)
{
    if (velocities.size() != flow.frames.size())
        fail(ErrorKind::invalid_argument, "continuity_residual: one velocity per frame required");
    const Grid1D& g = flow.grid;
    double worst = 0.0;
    std::vector<double> r(g.n);
    for (std::size_t k = 1; k + 1 < flow.frames.size(); ++k) {
        const auto& rho = flow.frames[k];
        VectorField J{g, std::vector<double>(g.n)};
        for (std::size_t i = 0; i < g.n; ++i) J.values[i] = velocities[k][i] * rho[i];
        const std::vector<double> div = divergence_flux(J);
        for (std::size_t i = 0; i < g.n; ++i)
            r[i] = std::abs((flow.frames[k + 1][i] - flow.frames[k - 1][i]) / (2.0 * flow.dt) + div[i]);
        worst = std::max(worst, integrate(r, g));
    }
    return worst;
}

/// Largest L1 norm over interior frames of ∂ρ/∂t + ∇·(b- ρ) + (σ²/2) Δρ with b- from nelson_frame.
/// The Laplacian is taken in osmotic form ∇·(ρ ∇log ρ) = ∇·(2u ρ / σ²), so that
/// stationary Gaussian states cancel exactly.
inline double backward_fp_residual(const DensityFlow& flow, const DiffusionSpec& spec)
{
    const Grid1D& g = flow.grid;
    double worst = 0.0;
    std::vector<double> r(g.n);
    for (std::size_t k = 1; k + 1 < flow.frames.size(); ++k) {
        const auto& rho = flow.frames[k];
        const KinematicsFrame kin = nelson_frame(spec, rho, flow.time(k));
        VectorField J{g, std::vector<double>(g.n)};
        for (std::size_t i = 0; i < g.n; ++i) J.values[i] = (kin.b_minus[i] + kin.u_osmotic[i]) * rho[i];
        const std::vector<double> div = divergence_flux(J);
        for (std::size_t i = 0; i < g.n; ++i)
            r[i] = std::abs((flow.frames[k + 1][i] - flow.frames[k - 1][i]) / (2.0 * flow.dt) + div[i]);
        worst = std::max(worst, integrate(r, g));
    }
    return worst;
}

}  // namespace entroflow

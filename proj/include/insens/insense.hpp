#pragma once

#include "insens/errors.hpp"
#include "insens/ficontrol.hpp"
#include "insens/pdecore.hpp"
#include "insens/setup.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace insens {

// Insensitizing-control synthesis for the quasilinear cascade
//
//   forward:  M (ψ^c - ψ^{c-1})/dt + S(ψ^c)            = M P(f_c + v_c 1_ω),  ψ^0 = 0
//   backward: M (h^{c-1} - h^c)/dt + S'(ψ^c)ᵀ h^{c-1}  = O ψ^c,               h^M = 0
//
// Writing the left sides as L - A with L the operator frozen at zero, the
// nonlinear parts are the cell fields
//
//   A₁₃_c = -M⁻¹ (S(ψ^c) - K ψ^c),   A₂₄_c = -M⁻¹ (S'(ψ^c)ᵀ - K) h^{c-1}.
//
// In one dimension the surface rows live in the two end dofs, so A₁₃ carries
// both the bulk part and the surface part of the ψ-equation, and A₂₄ those of
// the h-equation. The outer loop solves the linear null-control problem with
// sources (F + A₁₃(xᵏ), A₂₄(xᵏ)), i.e. modified Newton with the derivative
// frozen at zero.

inline QuasilinearModel make_model(const ModelSetup& s) { return QuasilinearModel{s.coeffs, s.g, s.tg}; }

/// Source pair in the ψ-rows and h-rows of the cascade (cell fields).
struct CascadeSources {
    SpaceTimeField psi_rows;
    SpaceTimeField h_rows;
};

namespace detail {

inline Vec minus_inv_mass(Vec r, const SpatialGrid& g) {
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = -r[i] / g.mass(i);
    return r;
}

} // namespace detail

/// A₁₃(Ψ) and A₂₄(Ψ, H): Ψ forward state, H backward state.
inline CascadeSources nonlinear_parts_A(const QuasilinearModel& model, const LinearOperatorSet& ops,
                                        const SpaceTimeField& psi, const SpaceTimeField& h) {
    const auto& g = model.grid;
    const Tridiag K = ops.stiffness();
    const Tridiag Kt = K.transpose();
    CascadeSources out{SpaceTimeField(g, model.time), SpaceTimeField(g, model.time)};
    for (std::size_t c = 1; c <= model.time.steps; ++c) {
        const Vec u = dofs_of(psi, c);
        const Vec hp = dofs_of(h, c - 1);
        Vec r = model.S(u);
        const Vec ku = K.apply(u);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= ku[i];
        out.psi_rows.set_dofs(c, detail::minus_inv_mass(std::move(r), g));
        Vec q = model.jacobian(u).transpose().apply(hp);
        const Vec kh = Kt.apply(hp);
        for (std::size_t i = 0; i < q.size(); ++i) q[i] -= kh[i];
        out.h_rows.set_dofs(c, detail::minus_inv_mass(std::move(q), g));
    }
    return out;
}

/// Directional derivative of (A₁₃, A₂₄) at (Ψ, H) along (Φ, K):
///   DA₁₃ = -M⁻¹ (S'(ψ) - K) φ,
///   DA₂₄ = -M⁻¹ [ (∂_ψ S'(ψ)ᵀh) φ + (S'(ψ)ᵀ - K) k ].
inline CascadeSources apply_A_derivative(const QuasilinearModel& model, const LinearOperatorSet& ops,
                                         const SpaceTimeField& psi, const SpaceTimeField& h,
                                         const SpaceTimeField& dpsi, const SpaceTimeField& dh) {
    const auto& g = model.grid;
    const Tridiag K = ops.stiffness();
    const Tridiag Kt = K.transpose();
    CascadeSources out{SpaceTimeField(g, model.time), SpaceTimeField(g, model.time)};
    for (std::size_t c = 1; c <= model.time.steps; ++c) {
        const Vec u = dofs_of(psi, c);
        const Vec hp = dofs_of(h, c - 1);
        const Vec du = dofs_of(dpsi, c);
        const Vec dhp = dofs_of(dh, c - 1);
        const Tridiag J = model.jacobian(u);
        Vec r = J.apply(du);
        const Vec kd = K.apply(du);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= kd[i];
        out.psi_rows.set_dofs(c, detail::minus_inv_mass(std::move(r), g));
        Vec q = model.hessian_apply(u, hp, du);
        const Vec jt = J.transpose().apply(dhp);
        const Vec kh = Kt.apply(dhp);
        for (std::size_t i = 0; i < q.size(); ++i) q[i] += jt[i] - kh[i];
        out.h_rows.set_dofs(c, detail::minus_inv_mass(std::move(q), g));
    }
    return out;
}

/// The linear part: (LΨ - v 1_ω, L*H - CΨ).
inline CascadeSources apply_linear_part(const LinearOperatorSet& ops, const Observation& obs,
                                        const RegionMasks& masks, const SpaceTimeField& psi,
                                        const SpaceTimeField& h, const SpaceTimeField& v) {
    CascadeSources out{apply_L(ops, psi), apply_Lstar(ops, h)};
    out.psi_rows -= mask_control(v, masks);
    out.h_rows -= apply_C_forward(obs, psi, ops.grid);
    return out;
}

/// Λ(Ψ, H, v) evaluated directly from the quasilinear residuals.
inline CascadeSources apply_Lambda(const QuasilinearModel& model, const Observation& obs,
                                   const RegionMasks& masks, const SpaceTimeField& psi,
                                   const SpaceTimeField& h, const SpaceTimeField& v) {
    const auto& g = model.grid;
    const double dt = model.time.dt;
    const SpaceTimeField vm = mask_control(v, masks);
    CascadeSources out{SpaceTimeField(g, model.time), SpaceTimeField(g, model.time)};
    for (std::size_t c = 1; c <= model.time.steps; ++c) {
        const Vec u = dofs_of(psi, c);
        const Vec up = dofs_of(psi, c - 1);
        const Vec hp = dofs_of(h, c - 1);
        const Vec hc = dofs_of(h, c);
        Vec r = model.S(u);
        Vec q = model.jacobian(u).transpose().apply(hp);
        const Vec ou = obs.apply_O(u);
        auto vv = vm.bulk(c);
        for (std::size_t i = 0; i < r.size(); ++i) {
            r[i] = (u[i] - up[i]) / dt + r[i] / g.mass(i) - vv[i];
            q[i] = (hp[i] - hc[i]) / dt + (q[i] - ou[i]) / g.mass(i);
        }
        out.psi_rows.set_dofs(c, r);
        out.h_rows.set_dofs(c, q);
    }
    return out;
}

// --- norms ------------------------------------------------------------------------

/// 𝕐-norm of a source pair: (||μF||² + ||μG||² + ||μ₄F_t||²)^{1/2}.
inline double y_norm(const WeightTables& w, const SpatialGrid& g, const TimeGrid& tg, const SpaceTimeField& F,
                     const SpaceTimeField& G) {
    return source_norms(w, g, tg, F, G).y_norm();
}

/// ||v||² in H¹(0,T;L²) ∩ L²(0,T;H²): ∫ ||v||² + ||v_t||² + ||∇v||² + ||Δv||² dt.
inline double control_norm(const SpaceTimeField& v, const SpatialGrid& g, const TimeGrid& tg) {
    const auto cells = detail::cells_of(v, detail::Placement::Cells, tg.steps);
    const auto vt = detail::time_diff(cells, tg.dt);
    double s = 0.0;
    for (std::size_t k = 0; k < tg.steps; ++k) {
        const auto a = detail::spatial_sq(cells[k], g);
        s += tg.dt * (a[0] + a[1] + a[2] + mass_inner(vt[k], vt[k], g));
    }
    return std::sqrt(s);
}

// --- outer loop ---------------------------------------------------------------------

struct SynthesisOptions {
    double loop_tol = 1e-9; // on the 𝕏-norm increment
    int max_outer = 30;
    int non_contraction_limit = 3;
    double cg_tol = 1e-10;  // relative optimality tolerance of each linear solve
    FIMethod method = FIMethod::Augmented;
};

struct SynthesisReport {
    SpaceTimeField v, psi, h;             // fixed point of the loop
    CascadeSolution verified;              // quasilinear cascade driven by v
    int iterations = 0;
    bool converged = false;
    std::vector<double> increments;        // 𝕏-norm of x^{k} - x^{k-1}
    std::vector<double> h0_history;        // ||h^0|| of each linear solve
    std::vector<double> fi_cascade_residual;
    std::vector<double> fi_optimality;     // relative normal-equation residual of each linear solve
    double max_contraction = 0.0;          // max ratio of consecutive increments
    double x_norm = 0.0;
    double y_norm = 0.0;                   // of (F, 0)
    double control_norm = 0.0;
    double control_ratio = 0.0;            // control_norm / y_norm
    double linear_control_ratio = 0.0;     // the same ratio for the first (purely linear) solve
    double h0_norm = 0.0;                  // ||h(·,0)|| of the verified quasilinear cascade
    double fixed_point_gap = 0.0;          // ||ψ_quasilinear - ψ_loop|| / ||ψ_loop||
    double seconds = 0.0;
};

inline SynthesisReport synthesize(const ModelSetup& s, const SpaceTimeField& F, const SynthesisOptions& opt = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    check_shape(F, s.g, s.tg, "synthesize: source F");
    const QuasilinearModel model = make_model(s);
    const SpaceTimeField zero(s.g, s.tg);

    SynthesisReport rep;
    rep.psi = rep.h = rep.v = zero;
    rep.y_norm = y_norm(s.weights, s.g, s.tg, F, zero);
    if (!std::isfinite(rep.y_norm))
        throw ConditioningError("synthesize: the weighted source norm ||F||_Y is not finite");

    // Residuals (LΨ - v, L*H - CΨ) of the current iterate: exactly the sources
    // of the solve that produced it.
    SpaceTimeField res_f = zero, res_b = zero;
    int growing = 0;
    for (int k = 1; k <= opt.max_outer; ++k) {
        CascadeSources A = nonlinear_parts_A(model, s.ops, rep.psi, rep.h);
        A.psi_rows += F;
        FIProblem p = make_fi_problem(s, std::move(A.psi_rows), std::move(A.h_rows));
        p.cg_tol = opt.cg_tol;
        FISolution sol = solve_fi(p, opt.method);
        rep.h0_history.push_back(sol.h0_norm);
        rep.fi_cascade_residual.push_back(cascade_residual(p, sol).relative);
        rep.fi_optimality.push_back(sol.cg.relative_residual);

        if (k == 1 && rep.y_norm > 0.0) rep.linear_control_ratio = control_norm(sol.v, s.g, s.tg) / rep.y_norm;

        const SpaceTimeField dpsi = sol.psi - rep.psi, dh = sol.h - rep.h, dv = sol.v - rep.v;
        const SpaceTimeField df = p.F - res_f, db = p.G - res_b;
        const ResidualView dres{df, db}, xres{p.F, p.G};
        const double inc = x_norm(s.weights, s.ops, s.obs, s.masks, TripleView{dpsi, dh, dv}, &dres).norm();
        const double xn = x_norm(s.weights, s.ops, s.obs, s.masks, TripleView{sol.psi, sol.h, sol.v}, &xres).norm();
        if (!std::isfinite(inc) || !std::isfinite(xn))
            throw ConditioningError("synthesize: X-norm of the iterate is not finite at step " + std::to_string(k));
        res_f = p.F;
        res_b = p.G;
        rep.increments.push_back(inc);
        rep.psi = std::move(sol.psi);
        rep.h = std::move(sol.h);
        rep.v = std::move(sol.v);
        rep.x_norm = xn;
        rep.iterations = k;

        if (k > 1) {
            const double prev = rep.increments[k - 2];
            const double ratio = prev > 0.0 ? inc / prev : 0.0;
            rep.max_contraction = std::max(rep.max_contraction, ratio);
            growing = ratio >= 1.0 ? growing + 1 : 0;
            if (growing >= opt.non_contraction_limit)
                throw SmallnessError("synthesize: outer loop not contracting (increment ratio >= 1 for " +
                                     std::to_string(growing) + " consecutive steps, last " + fmt_sci(ratio) +
                                     "); ||F||_Y = " + fmt_sci(rep.y_norm) +
                                     " is outside the small-data radius of the existence result");
        }
        if (inc == 0.0 || inc <= opt.loop_tol) {
            rep.converged = true;
            break;
        }
    }

    rep.verified = solve_quasilinear_cascade(model, s.obs, s.masks, F, rep.v);
    rep.h0_norm = l2_norm(rep.verified.h.slice(0), s.g);
    const double pn = st_norm(rep.psi, s.g, s.tg);
    rep.fixed_point_gap = pn > 0.0 ? st_norm(rep.verified.psi - rep.psi, s.g, s.tg) / pn : 0.0;
    rep.control_norm = control_norm(rep.v, s.g, s.tg);
    rep.control_ratio = rep.y_norm > 0.0 ? rep.control_norm / rep.y_norm : 0.0;
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

/// CSV of the outer-loop history: iteration, increment, h0 of the linear solve.
inline void write_history_csv(std::ostream& os, const SynthesisReport& r) {
    const auto old = os.precision(17);
    os << "iteration,increment,h0_norm,cascade_residual\n";
    for (std::size_t k = 0; k < r.increments.size(); ++k)
        os << k + 1 << ',' << r.increments[k] << ',' << r.h0_history[k] << ',' << r.fi_cascade_residual[k] << '\n';
    os.precision(old);
}

// --- functional and insensitivity -----------------------------------------------------

/// 𝒥 = (θ/2)∫_{𝒪_T}|ψ|² + (θ_Γ/2)∫_{Σ_T}|ψ_Γ|², trapezoid in space, one value per cell.
inline double functional_J(const Observation& obs, const SpaceTimeField& psi, const TimeGrid& tg) {
    double s = 0.0;
    for (std::size_t c = 1; c <= tg.steps; ++c) s += obs.energy(psi.bulk(c));
    return 0.5 * tg.dt * s;
}

/// Discrete Sobolev proxy of the H³ norm: L² norms of the values and of the
/// first three difference quotients of the bulk, plus the surface values.
inline double h3_proxy_norm(const BulkSurfaceField& d, const SpatialGrid& g) {
    Vec cur = d.bulk;
    double s = 0.0;
    for (int order = 0; order <= 3; ++order) {
        double q = 0.0;
        for (double x : cur) q += g.h * x * x;
        s += q;
        if (order < 3) {
            Vec next(cur.size() - 1);
            for (std::size_t i = 0; i + 1 < cur.size(); ++i) next[i] = (cur[i + 1] - cur[i]) / g.h;
            cur = std::move(next);
        }
    }
    s += d.surface[0] * d.surface[0] + d.surface[1] * d.surface[1];
    return std::sqrt(s);
}

/// Initial-data perturbation (ψ̂₀, ψ̂₀_Γ) with unit H³-proxy norm, and the τ ladder.
struct PerturbationSpec {
    BulkSurfaceField direction;
    std::vector<double> ladder{2e-2, 1e-2, 5e-3};
};

inline BulkSurfaceField normalize_direction(BulkSurfaceField d, const SpatialGrid& g) {
    const double n = h3_proxy_norm(d, g);
    if (!(n > 0.0)) throw ConfigError("perturbation: direction has zero norm");
    for (double& x : d.bulk) x /= n;
    d.surface[0] /= n;
    d.surface[1] /= n;
    return d;
}

/// Smooth random unit direction: a few cosine modes, trace-compatible.
inline BulkSurfaceField random_direction(const SpatialGrid& g, std::mt19937_64& rng, int modes = 4) {
    std::normal_distribution<double> nd(0.0, 1.0);
    BulkSurfaceField d(g.nodes());
    for (int k = 0; k < modes; ++k) {
        const double a = nd(rng) / (1.0 + k * k);
        for (std::size_t i = 0; i < g.nodes(); ++i)
            d.bulk[i] += a * std::cos(std::numbers::pi * k * g.x(i) / g.length);
    }
    d.surface = {d.bulk.front(), d.bulk.back()};
    return normalize_direction(std::move(d), g);
}

/// 𝒥 for the state started from (τ ψ̂₀, τ_Γ ψ̂₀_Γ) under source F and control v.
inline double evaluate_J(const ModelSetup& s, const SpaceTimeField& F, const SpaceTimeField& v, double tau,
                         double tau_gamma, const BulkSurfaceField& direction) {
    BulkSurfaceField y0(s.g.nodes());
    for (std::size_t i = 0; i < y0.bulk.size(); ++i) y0.bulk[i] = tau * direction.bulk[i];
    y0.surface = {tau_gamma * direction.surface[0], tau_gamma * direction.surface[1]};
    const auto psi = solve_quasilinear(make_model(s), F, y0, &v, &s.masks);
    return functional_J(s.obs, psi, s.tg);
}

/// Fit of 𝒥(τ) - 𝒥(0) = a τ + b τ² over the symmetric ladder ±τ_k.
struct LadderFit {
    std::vector<double> tau, J;
    double J0 = 0.0;
    double linear = 0.0, quadratic = 0.0;
};

struct DirectionReport {
    double fd_tau = 0.0, fd_tau_gamma = 0.0;           // Richardson-extrapolated centred differences
    double adjoint_tau = 0.0, adjoint_tau_gamma = 0.0; // <ψ̂₀, h(·,0)>, <ψ̂₀_Γ, h_Γ(·,0)>
    double discrepancy = 0.0;                          // max of the two |fd - adjoint|
    double fd_truncation = 0.0;                        // |Richardson - finest centred difference|
    double budget = 0.0;                               // allowed discrepancy
    bool agree = false;
    bool ladder_converging = true;                     // centred differences settle as τ shrinks
    LadderFit fit;
};

struct InsensitivityReport {
    std::vector<DirectionReport> directions;
    double max_fd = 0.0, max_adjoint = 0.0, max_discrepancy = 0.0, max_linear = 0.0;
    double h0_norm = 0.0;
    std::vector<std::string> warnings;
};

namespace detail {

/// Richardson extrapolation of centred differences D(τ_k) on a geometric ladder.
inline double richardson(const std::vector<double>& tau, const std::vector<double>& D) {
    const std::size_t n = D.size();
    if (n < 2) return D.back();
    const double r = tau[n - 2] / tau[n - 1];
    return (r * r * D[n - 1] - D[n - 2]) / (r * r - 1.0);
}

inline std::pair<double, double> fit_linear_quadratic(const std::vector<double>& t, const std::vector<double>& y) {
    double s22 = 0, s23 = 0, s44 = 0, s2y = 0, s1y = 0;
    for (std::size_t k = 0; k < t.size(); ++k) {
        const double a = t[k], b = t[k] * t[k];
        s22 += a * a;
        s23 += a * b;
        s44 += b * b;
        s1y += a * y[k];
        s2y += b * y[k];
    }
    const double det = s22 * s44 - s23 * s23;
    return {(s1y * s44 - s2y * s23) / det, (s22 * s2y - s23 * s1y) / det};
}

} // namespace detail

/// Per direction: centred differences of 𝒥 in τ and τ_Γ with Richardson
/// extrapolation, against the adjoint values from the quasilinear cascade.
/// The agreement budget is fd truncation + 1e-6·(|adjoint| + scale) where
/// scale bounds Newton and rounding noise relative to 𝒥.
inline InsensitivityReport insensitivity_check(const ModelSetup& s, const SpaceTimeField& F, const SpaceTimeField& v,
                                               const std::vector<PerturbationSpec>& dirs) {
    const QuasilinearModel model = make_model(s);
    const auto cascade = solve_quasilinear_cascade(model, s.obs, s.masks, F, v);
    const Vec h0 = dofs_of(cascade.h, 0);
    const double J0 = functional_J(s.obs, cascade.psi, s.tg);

    InsensitivityReport rep;
    rep.h0_norm = l2_norm(cascade.h.slice(0), s.g);
    for (std::size_t d = 0; d < dirs.size(); ++d) {
        const auto& spec = dirs[d];
        if (spec.ladder.empty()) throw ConfigError("insensitivity: empty tau ladder");
        DirectionReport r;
        for (std::size_t i = 0; i < s.g.nodes(); ++i) r.adjoint_tau += s.g.bulk_weight(i) * spec.direction.bulk[i] * h0[i];
        r.adjoint_tau_gamma = spec.direction.surface[0] * h0.front() + spec.direction.surface[1] * h0.back();

        std::vector<double> Dt, Dg;
        r.fit.J0 = J0;
        for (double tau : spec.ladder) {
            const double jp = evaluate_J(s, F, v, tau, 0.0, spec.direction);
            const double jm = evaluate_J(s, F, v, -tau, 0.0, spec.direction);
            Dt.push_back((jp - jm) / (2.0 * tau));
            const double gp = evaluate_J(s, F, v, 0.0, tau, spec.direction);
            const double gm = evaluate_J(s, F, v, 0.0, -tau, spec.direction);
            Dg.push_back((gp - gm) / (2.0 * tau));
            r.fit.tau.insert(r.fit.tau.end(), {tau, -tau});
            r.fit.J.insert(r.fit.J.end(), {jp - J0, jm - J0});
        }
        r.fd_tau = detail::richardson(spec.ladder, Dt);
        r.fd_tau_gamma = detail::richardson(spec.ladder, Dg);
        r.fd_truncation = std::max(std::abs(r.fd_tau - Dt.back()), std::abs(r.fd_tau_gamma - Dg.back()));
        if (Dt.size() >= 3) {
            const std::size_t n = Dt.size();
            const double e1 = std::abs(Dt[n - 2] - Dt[n - 3]), e2 = std::abs(Dt[n - 1] - Dt[n - 2]);
            r.ladder_converging = e2 <= e1 || e2 <= 1e-14 * (std::abs(J0) + 1e-300);
            if (!r.ladder_converging)
                rep.warnings.push_back("insensitivity: direction " + std::to_string(d) +
                                       ": tau ladder shows no O(tau^2) trend (" + fmt_sci(e1) + " -> " +
                                       fmt_sci(e2) + "); refine the ladder");
        }
        const auto [lin, quad] = detail::fit_linear_quadratic(r.fit.tau, r.fit.J);
        r.fit.linear = lin;
        r.fit.quadratic = quad;
        r.discrepancy = std::max(std::abs(r.fd_tau - r.adjoint_tau), std::abs(r.fd_tau_gamma - r.adjoint_tau_gamma));
        const double scale = std::abs(r.adjoint_tau) + std::abs(r.adjoint_tau_gamma);
        r.budget = std::max(1e-12, 10.0 * r.fd_truncation + 1e-6 * scale);
        r.agree = r.discrepancy <= r.budget;

        rep.max_fd = std::max({rep.max_fd, std::abs(r.fd_tau), std::abs(r.fd_tau_gamma)});
        rep.max_adjoint = std::max({rep.max_adjoint, std::abs(r.adjoint_tau), std::abs(r.adjoint_tau_gamma)});
        rep.max_discrepancy = std::max(rep.max_discrepancy, r.discrepancy);
        rep.max_linear = std::max(rep.max_linear, std::abs(r.fit.linear));
        rep.directions.push_back(std::move(r));
    }
    return rep;
}

/// CSV of the (τ, 𝒥(τ) - 𝒥(0)) ladders.
inline void write_ladder_csv(std::ostream& os, const InsensitivityReport& r) {
    const auto old = os.precision(17);
    os << "direction,tau,dJ\n";
    for (std::size_t d = 0; d < r.directions.size(); ++d) {
        const auto& f = r.directions[d].fit;
        for (std::size_t k = 0; k < f.tau.size(); ++k) os << d << ',' << f.tau[k] << ',' << f.J[k] << '\n';
    }
    os.precision(old);
}

/// θ∫ψz + θ_Γ∫ψ_Γz_Γ against <z(·,0), h(·,0)> along the quasilinear state Ψ.
struct DualityReport {
    double lhs = 0.0, rhs = 0.0, discrepancy = 0.0, relative = 0.0;
};

inline DualityReport duality_identity_check(const QuasilinearModel& model, const Observation& obs,
                                            const SpaceTimeField& psi, const BulkSurfaceField& direction) {
    const auto& g = model.grid;
    const auto H = solve_quasilinear_adjoint(model, obs, psi, SpaceTimeField(g, model.time));
    const auto Z = solve_sensitivity(model, psi, direction);
    DualityReport r;
    for (std::size_t c = 1; c <= model.time.steps; ++c) {
        const Vec oz = obs.apply_O(Z.bulk(c));
        auto u = psi.bulk(c);
        for (std::size_t i = 0; i < oz.size(); ++i) r.lhs += model.time.dt * u[i] * oz[i];
    }
    r.rhs = mass_inner(Z.bulk(0), H.bulk(0), g);
    r.discrepancy = std::abs(r.lhs - r.rhs);
    const double scale = std::max(std::abs(r.lhs), std::abs(r.rhs));
    r.relative = scale > 0.0 ? r.discrepancy / scale : 0.0;
    return r;
}

// --- boundedness of Λ ---------------------------------------------------------------

/// Random smooth triple with finite 𝕏-norm: fields switched on after 0.25 T
/// and off before 0.9 T, control supported where χ > 0.
struct Triple {
    SpaceTimeField psi, h, v;
};

inline Triple random_triple(const ModelSetup& s, std::mt19937_64& rng, double amplitude) {
    std::normal_distribution<double> nd(0.0, 1.0);
    auto field = [&](bool control) {
        double a[4];
        for (double& x : a) x = nd(rng);
        SpaceTimeField f(s.g, s.tg);
        Vec d(s.g.nodes());
        for (std::size_t j = 0; j <= s.tg.steps; ++j) {
            const double e = amplitude * detail::time_envelope(s.tg.t(j), 0.25 * s.tg.horizon, 0.9 * s.tg.horizon);
            for (std::size_t i = 0; i < d.size(); ++i) {
                double val = 0.0;
                for (int k = 0; k < 4; ++k) val += a[k] * std::cos(std::numbers::pi * k * s.g.x(i) / s.g.length) / (1.0 + k);
                d[i] = e * val * (control ? s.chi.values[i] : 1.0);
            }
            f.set_dofs(j, d);
        }
        return f;
    };
    Triple t;
    t.psi = field(false);
    t.h = field(false);
    t.v = field(true);
    t.v.set_dofs(0, Vec(s.g.nodes(), 0.0));
    return t;
}

struct BoundednessReport {
    std::vector<double> x_norms, lambda_norms, ratios;
    double max_ratio = 0.0;
};

/// ||Λ(x)||²_𝕐 / (||x||²_𝕏 + ||x||⁴_𝕏 + ||x||⁶_𝕏) over random triples of the given amplitudes.
inline BoundednessReport lambda_boundedness(const ModelSetup& s, const std::vector<double>& amplitudes,
                                            std::uint64_t seed = 1) {
    const QuasilinearModel model = make_model(s);
    std::mt19937_64 rng(seed);
    BoundednessReport rep;
    for (double amp : amplitudes) {
        const Triple t = random_triple(s, rng, amp);
        const auto lam = apply_Lambda(model, s.obs, s.masks, t.psi, t.h, t.v);
        const double ln = y_norm(s.weights, s.g, s.tg, lam.psi_rows, lam.h_rows);
        const double xn = x_norm(s.weights, s.ops, s.obs, s.masks, TripleView{t.psi, t.h, t.v}).norm();
        const double x2 = xn * xn;
        const double ratio = x2 > 0.0 ? ln * ln / (x2 + x2 * x2 + x2 * x2 * x2) : 0.0;
        if (!std::isfinite(ratio))
            throw ConditioningError("lambda boundedness: non-finite ratio at amplitude " + fmt_sci(amp));
        rep.x_norms.push_back(xn);
        rep.lambda_norms.push_back(ln);
        rep.ratios.push_back(ratio);
        rep.max_ratio = std::max(rep.max_ratio, ratio);
    }
    return rep;
}

} // namespace insens

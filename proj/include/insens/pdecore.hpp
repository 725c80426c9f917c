#pragma once

#include "insens/coefficients.hpp"
#include "insens/errors.hpp"
#include "insens/geometry.hpp"

#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace insens {

// All states are trace-compatible dof vectors y in R^{N+1}: bulk nodal values
// whose two end entries double as the surface values. The bulk and surface
// equations at an end node are combined with their L^2 weights (h/2 and 1), so
// one step of the dynamic-boundary problem reads
//
//     M (y^c - y^{c-1}) / dt + S(y^c) = M P f_c
//
// with M the lumped L^2 mass, S the (possibly nonlinear) stiffness and P the
// L^2 projection of a bulk/surface source onto trace-compatible fields. The
// normal-derivative coupling cancels exactly in this combination.

/// Tridiagonal matrix; lower[0] and upper[n-1] are unused.
struct Tridiag {
    Vec lower, diag, upper;

    explicit Tridiag(std::size_t n = 0) : lower(n, 0.0), diag(n, 0.0), upper(n, 0.0) {}
    std::size_t size() const { return diag.size(); }

    Vec apply(std::span<const double> x) const {
        const std::size_t n = size();
        Vec y(n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = diag[i] * x[i];
            if (i > 0) s += lower[i] * x[i - 1];
            if (i + 1 < n) s += upper[i] * x[i + 1];
            y[i] = s;
        }
        return y;
    }

    Tridiag transpose() const {
        const std::size_t n = size();
        Tridiag t(n);
        t.diag = diag;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            t.upper[i] = lower[i + 1];
            t.lower[i + 1] = upper[i];
        }
        return t;
    }

    /// Thomas algorithm. The step matrices are diagonally dominant for dt > 0,
    /// so no pivoting is needed; a vanishing pivot is still reported.
    Vec solve(Vec rhs) const {
        const std::size_t n = size();
        Vec c(n);
        double beta = diag[0];
        if (beta == 0.0) throw ContractError("tridiagonal solve: zero pivot at row 0");
        rhs[0] /= beta;
        for (std::size_t i = 1; i < n; ++i) {
            c[i] = upper[i - 1] / beta;
            beta = diag[i] - lower[i] * c[i];
            if (beta == 0.0 || !std::isfinite(beta))
                throw ContractError("tridiagonal solve: singular step matrix at row " + std::to_string(i));
            rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
        }
        for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= c[i + 1] * rhs[i + 1];
        return rhs;
    }
};

/// The constant-coefficient operators frozen at zero: σ(0), δ(0), a'(0), b'(0).
struct LinearOperatorSet {
    SpatialGrid grid;
    TimeGrid time;
    double sigma0 = 1.0;
    double delta0 = 1.0; // carried for completeness; Δ_Γ = 0 in 1D
    double a1 = 0.0;
    double b1 = 0.0;

    /// Stiffness K = σ0 D + a1 H + b1 E.
    Tridiag stiffness() const {
        const std::size_t n = grid.nodes();
        const double k = sigma0 / grid.h;
        Tridiag K(n);
        for (std::size_t f = 0; f < grid.cells; ++f) {
            K.diag[f] += k;
            K.diag[f + 1] += k;
            K.upper[f] -= k;
            K.lower[f + 1] -= k;
        }
        for (std::size_t i = 0; i < n; ++i) K.diag[i] += a1 * grid.bulk_weight(i);
        K.diag[0] += b1;
        K.diag[n - 1] += b1;
        return K;
    }

    /// M/dt + K, shared by the forward and the backward step.
    Tridiag step_matrix() const {
        Tridiag S = stiffness();
        for (std::size_t i = 0; i < grid.nodes(); ++i) S.diag[i] += grid.mass(i) / time.dt;
        return S;
    }

    /// A y = M^{-1} K y: the spatial part -σ0 Δ + a1 (bulk), σ0 ∂_ν + b1 (surface).
    Vec apply_A(std::span<const double> y) const {
        Vec r = stiffness().apply(y);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] /= grid.mass(i);
        return r;
    }
};

inline LinearOperatorSet make_linear_operators(const CoefficientSet& c, const SpatialGrid& g,
                                               const TimeGrid& tg) {
    return LinearOperatorSet{g, tg, c.sigma0(), c.delta.value(0.0), c.a1(), c.b1()};
}

inline Vec dofs_of(const SpaceTimeField& y, std::size_t j) {
    auto b = y.bulk(j);
    return Vec(b.begin(), b.end());
}

/// Projected source dofs of cell c.
inline Vec source_dofs(const SpaceTimeField& f, std::size_t c, const SpatialGrid& g) {
    return project_trace(f.slice(c), g);
}

inline void check_shape(const SpaceTimeField& y, const SpatialGrid& g, const TimeGrid& tg,
                        const char* what) {
    if (y.nodes() != g.nodes() || y.slices() != tg.nodes())
        throw ContractError(std::string(what) + ": field shape does not match the grids");
}

// --- operators ----------------------------------------------------------------

/// (LY)_c = (y^c - y^{c-1})/dt + A y^c, c = 1..M, as a cell field.
inline SpaceTimeField apply_L(const LinearOperatorSet& ops, const SpaceTimeField& Y) {
    check_shape(Y, ops.grid, ops.time, "apply_L");
    const Tridiag K = ops.stiffness();
    SpaceTimeField out(Y.nodes(), Y.slices());
    for (std::size_t c = 1; c <= ops.time.steps; ++c) {
        auto yc = Y.bulk(c);
        auto yp = Y.bulk(c - 1);
        Vec r = K.apply(yc);
        for (std::size_t i = 0; i < r.size(); ++i)
            r[i] = (yc[i] - yp[i]) / ops.time.dt + r[i] / ops.grid.mass(i);
        out.set_dofs(c, r);
    }
    return out;
}

/// (L*W)_c = (w^{c-1} - w^c)/dt + A w^{c-1}: the transpose of L in the
/// dt-weighted mass pairing, <LY, W> = <Y, L*W> whenever y^0 = 0, w^M = 0.
inline SpaceTimeField apply_Lstar(const LinearOperatorSet& ops, const SpaceTimeField& W) {
    check_shape(W, ops.grid, ops.time, "apply_Lstar");
    const Tridiag K = ops.stiffness();
    SpaceTimeField out(W.nodes(), W.slices());
    for (std::size_t c = 1; c <= ops.time.steps; ++c) {
        auto wp = W.bulk(c - 1);
        auto wc = W.bulk(c);
        Vec r = K.apply(wp);
        for (std::size_t i = 0; i < r.size(); ++i)
            r[i] = (wp[i] - wc[i]) / ops.time.dt + r[i] / ops.grid.mass(i);
        out.set_dofs(c, r);
    }
    return out;
}

/// Space-time pairing <LY, W>: cell c of LY meets w^{c-1}.
inline double pair_forward(const SpaceTimeField& LY, const SpaceTimeField& W, const SpatialGrid& g,
                           const TimeGrid& tg) {
    return st_inner(LY, backward_cells(W), g, tg);
}

/// Space-time pairing <Y, L*W>: y^c meets cell c of L*W.
inline double pair_backward(const SpaceTimeField& Y, const SpaceTimeField& LsW, const SpatialGrid& g,
                            const TimeGrid& tg) {
    return st_inner(forward_cells(Y), LsW, g, tg);
}

// --- observation ----------------------------------------------------------------

/// Diagonal observation O = θ 1_O H + θ_Γ 1_Σ E acting on dofs. C = M^{-1} O is
/// the coupling ψ ↦ (θ ψ 1_O, θ_Γ ψ_Γ 1_Σ) projected onto trace-compatible fields.
struct Observation {
    Vec diag;

    double energy(std::span<const double> y) const {
        double s = 0.0;
        for (std::size_t i = 0; i < diag.size(); ++i) s += diag[i] * y[i] * y[i];
        return s;
    }
    Vec apply_O(std::span<const double> y) const {
        Vec r(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) r[i] = diag[i] * y[i];
        return r;
    }
    Vec apply_C(std::span<const double> y, const SpatialGrid& g) const {
        Vec r = apply_O(y);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] /= g.mass(i);
        return r;
    }
};

inline Observation make_observation(const SpatialGrid& g, const RegionMasks& m, double theta,
                                    double theta_gamma) {
    if (!(theta > 0.0)) throw ConfigError("functional: theta must be > 0, got " + std::to_string(theta));
    if (!(theta_gamma >= 0.0))
        throw ConfigError("functional: theta_Gamma must be >= 0, got " + std::to_string(theta_gamma));
    Observation o;
    o.diag.assign(g.nodes(), 0.0);
    for (std::size_t i = 0; i < g.nodes(); ++i)
        if (m.obs_nodes[i]) o.diag[i] = theta * g.bulk_weight(i);
    if (m.sigma_left) o.diag.front() += theta_gamma;
    if (m.sigma_right) o.diag.back() += theta_gamma;
    return o;
}

/// Cell field C Y where cell c carries y^c (Y a forward state).
inline SpaceTimeField apply_C_forward(const Observation& obs, const SpaceTimeField& Y,
                                      const SpatialGrid& g) {
    SpaceTimeField out(Y.nodes(), Y.slices());
    for (std::size_t c = 1; c < Y.slices(); ++c) out.set_dofs(c, obs.apply_C(Y.bulk(c), g));
    return out;
}

/// Zeroes the control outside the ω node mask.
inline SpaceTimeField mask_control(const SpaceTimeField& v, const RegionMasks& m) {
    SpaceTimeField out(v.nodes(), v.slices());
    for (std::size_t c = 1; c < v.slices(); ++c) {
        auto src = v.bulk(c);
        auto dst = out.bulk(c);
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = m.omega_nodes[i] ? src[i] : 0.0;
    }
    return out;
}

// --- linear solvers ---------------------------------------------------------------

/// Solves L Ψ = F with Ψ^0 = P psi0. F is a cell field (slice c = cell c).
inline SpaceTimeField solve_linear_forward(const LinearOperatorSet& ops, const SpaceTimeField& F,
                                           const BulkSurfaceField& psi0) {
    check_shape(F, ops.grid, ops.time, "solve_linear_forward");
    const auto& g = ops.grid;
    const Tridiag S = ops.step_matrix();
    SpaceTimeField Y(g, ops.time);
    Y.set_dofs(0, project_trace(psi0, g));
    for (std::size_t c = 1; c <= ops.time.steps; ++c) {
        Vec rhs = source_dofs(F, c, g);
        auto yp = Y.bulk(c - 1);
        for (std::size_t i = 0; i < rhs.size(); ++i)
            rhs[i] = g.mass(i) * (rhs[i] + yp[i] / ops.time.dt);
        Y.set_dofs(c, S.solve(std::move(rhs)));
    }
    return Y;
}

/// Solves L* W = G with W^M = P terminal, marching backward in time.
inline SpaceTimeField solve_linear_backward(const LinearOperatorSet& ops, const SpaceTimeField& G,
                                            const BulkSurfaceField& terminal) {
    check_shape(G, ops.grid, ops.time, "solve_linear_backward");
    const auto& g = ops.grid;
    const Tridiag S = ops.step_matrix();
    SpaceTimeField W(g, ops.time);
    W.set_dofs(ops.time.steps, project_trace(terminal, g));
    for (std::size_t c = ops.time.steps; c >= 1; --c) {
        Vec rhs = source_dofs(G, c, g);
        auto wn = W.bulk(c);
        for (std::size_t i = 0; i < rhs.size(); ++i)
            rhs[i] = g.mass(i) * (rhs[i] + wn[i] / ops.time.dt);
        W.set_dofs(c - 1, S.solve(std::move(rhs)));
    }
    return W;
}

/// Reverses a cell field: cell c of the result is cell M+1-c of the input.
inline SpaceTimeField reverse_cells(const SpaceTimeField& F) {
    SpaceTimeField out(F.nodes(), F.slices());
    const std::size_t M = F.slices() - 1;
    for (std::size_t c = 1; c <= M; ++c) out.set_slice(c, F.slice(M + 1 - c));
    return out;
}

/// Reverses a state: slice j of the result is slice M-j.
inline SpaceTimeField reverse_states(const SpaceTimeField& Y) {
    SpaceTimeField out(Y.nodes(), Y.slices());
    const std::size_t M = Y.slices() - 1;
    for (std::size_t j = 0; j <= M; ++j) out.set_slice(j, Y.slice(M - j));
    return out;
}

struct CascadeSolution {
    SpaceTimeField psi; // forward, psi^0 = 0
    SpaceTimeField h;   // backward, h^M = 0
};

/// ψ forward with source F + v 1_ω, then h backward with source G + C ψ.
inline CascadeSolution solve_linearized_cascade(const LinearOperatorSet& ops, const Observation& obs,
                                                const RegionMasks& masks, const SpaceTimeField& F,
                                                const SpaceTimeField& G, const SpaceTimeField& v) {
    const auto& g = ops.grid;
    SpaceTimeField src = F;
    src += mask_control(v, masks);
    CascadeSolution out;
    out.psi = solve_linear_forward(ops, src, BulkSurfaceField(g.nodes()));
    SpaceTimeField back = G;
    // G may be non-trace-compatible; C ψ already is, and projection is linear.
    back += apply_C_forward(obs, out.psi, g);
    out.h = solve_linear_backward(ops, back, BulkSurfaceField(g.nodes()));
    return out;
}

// --- quasilinear model ------------------------------------------------------------

/// Divergence-form stiffness with face-averaged σ:
///   S(u)_i = F_{i-1} - F_i + H_i a(u_i) + E_i b(u_i),
///   F_f = σ((u_f + u_{f+1})/2) (u_{f+1} - u_f)/h.
struct QuasilinearModel {
    CoefficientSet coeffs;
    SpatialGrid grid;
    TimeGrid time;

    Vec S(std::span<const double> u) const {
        const std::size_t n = grid.nodes();
        Vec r(n, 0.0);
        for (std::size_t f = 0; f < grid.cells; ++f) {
            const double m = 0.5 * (u[f] + u[f + 1]);
            const double flux = coeffs.sigma.value(m) * (u[f + 1] - u[f]) / grid.h;
            r[f] -= flux;
            r[f + 1] += flux;
        }
        for (std::size_t i = 0; i < n; ++i) r[i] += grid.bulk_weight(i) * coeffs.a.value(u[i]);
        r[0] += coeffs.b.value(u[0]);
        r[n - 1] += coeffs.b.value(u[n - 1]);
        return r;
    }

    /// Jacobian S'(u).
    Tridiag jacobian(std::span<const double> u) const {
        const std::size_t n = grid.nodes();
        Tridiag J(n);
        for (std::size_t f = 0; f < grid.cells; ++f) {
            const double m = 0.5 * (u[f] + u[f + 1]);
            const auto s = coeffs.sigma.eval(m);
            const double du = u[f + 1] - u[f];
            const double dl = (0.5 * s[1] * du - s[0]) / grid.h; // ∂F/∂u_f
            const double dr = (0.5 * s[1] * du + s[0]) / grid.h; // ∂F/∂u_{f+1}
            J.diag[f] -= dl;
            J.upper[f] -= dr;
            J.lower[f + 1] += dl;
            J.diag[f + 1] += dr;
        }
        for (std::size_t i = 0; i < n; ++i) J.diag[i] += grid.bulk_weight(i) * coeffs.a.d1(u[i]);
        J.diag[0] += coeffs.b.d1(u[0]);
        J.diag[n - 1] += coeffs.b.d1(u[n - 1]);
        return J;
    }

    /// Hessian of u ↦ hᵀS(u) applied to φ.
    Vec hessian_apply(std::span<const double> u, std::span<const double> h,
                      std::span<const double> phi) const {
        const std::size_t n = grid.nodes();
        Vec r(n, 0.0);
        for (std::size_t f = 0; f < grid.cells; ++f) {
            const double m = 0.5 * (u[f] + u[f + 1]);
            const auto s = coeffs.sigma.eval(m);
            const double du = u[f + 1] - u[f];
            const double dh = (h[f + 1] - h[f]) / grid.h;
            const double q = 0.25 * s[2] * du;
            const double hll = (q - s[1]) * dh;
            const double hlr = q * dh;
            const double hrr = (q + s[1]) * dh;
            r[f] += hll * phi[f] + hlr * phi[f + 1];
            r[f + 1] += hlr * phi[f] + hrr * phi[f + 1];
        }
        for (std::size_t i = 0; i < n; ++i)
            r[i] += grid.bulk_weight(i) * coeffs.a.d2(u[i]) * h[i] * phi[i];
        r[0] += coeffs.b.d2(u[0]) * h[0] * phi[0];
        r[n - 1] += coeffs.b.d2(u[n - 1]) * h[n - 1] * phi[n - 1];
        return r;
    }
};

struct NewtonOptions {
    double tol = 1e-11;
    int max_iter = 25;
    /// Added to the default initial guess u^{c-1} at every step (uniqueness checks).
    std::optional<Vec> guess_offset;
};

namespace detail {
inline double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}
} // namespace detail

/// Fully implicit Euler with Newton per step:
///   M (u^c - u^{c-1})/dt + S(u^c) = M P(f_c + v_c 1_ω).
inline SpaceTimeField solve_quasilinear(const QuasilinearModel& model, const SpaceTimeField& F,
                                        const BulkSurfaceField& psi0,
                                        const SpaceTimeField* v = nullptr,
                                        const RegionMasks* masks = nullptr,
                                        const NewtonOptions& opt = {}) {
    const auto& g = model.grid;
    const double dt = model.time.dt;
    check_shape(F, g, model.time, "solve_quasilinear");
    SpaceTimeField src = F;
    if (v) {
        if (!masks) throw ContractError("solve_quasilinear: control given without region masks");
        src += mask_control(*v, *masks);
    }
    SpaceTimeField U(g, model.time);
    U.set_dofs(0, project_trace(psi0, g));
    for (std::size_t c = 1; c <= model.time.steps; ++c) {
        const Vec prev = dofs_of(U, c - 1);
        Vec rhs = source_dofs(src, c, g);
        for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = g.mass(i) * (rhs[i] + prev[i] / dt);
        Vec u = prev;
        if (opt.guess_offset)
            for (std::size_t i = 0; i < u.size(); ++i) u[i] += (*opt.guess_offset)[i];
        bool converged = false;
        double res_norm = 0.0;
        for (int it = 0; it < opt.max_iter; ++it) {
            Vec r = model.S(u);
            for (std::size_t i = 0; i < r.size(); ++i) r[i] += g.mass(i) * u[i] / dt - rhs[i];
            res_norm = detail::max_abs(r);
            Tridiag J = model.jacobian(u);
            for (std::size_t i = 0; i < u.size(); ++i) J.diag[i] += g.mass(i) / dt;
            const Vec du = J.solve(std::move(r));
            for (std::size_t i = 0; i < u.size(); ++i) u[i] -= du[i];
            const double dn = detail::max_abs(du);
            if (!std::isfinite(dn)) break;
            if (dn <= opt.tol * detail::max_abs(u) || dn == 0.0) {
                converged = true;
                break;
            }
        }
        if (!converged)
            throw SmallnessError("quasilinear: Newton failed to converge at step " + std::to_string(c) +
                                 " (t = " + std::to_string(model.time.t(c)) + ", residual " +
                                 std::to_string(res_norm) +
                                 "); data outside the small-data regime of the well-posedness result");
        U.set_dofs(c, u);
    }
    return U;
}

/// Backward step with the transposed Newton Jacobian of the forward step:
///   M (h^{c-1} - h^c)/dt + S'(u^c)ᵀ h^{c-1} = M P(g_c) + O u^c.
/// Its continuum form is -h_t - σ(ψ)Δh + a'(ψ)h with surface row σ(ψ_Γ)∂_ν h + b'(ψ_Γ)h_Γ.
inline SpaceTimeField solve_quasilinear_adjoint(const QuasilinearModel& model, const Observation& obs,
                                                const SpaceTimeField& U, const SpaceTimeField& G) {
    const auto& g = model.grid;
    const double dt = model.time.dt;
    SpaceTimeField Hs(g, model.time);
    for (std::size_t c = model.time.steps; c >= 1; --c) {
        const Vec uc = dofs_of(U, c);
        Vec rhs = source_dofs(G, c, g);
        const Vec ou = obs.apply_O(uc);
        auto hn = Hs.bulk(c);
        for (std::size_t i = 0; i < rhs.size(); ++i)
            rhs[i] = g.mass(i) * (rhs[i] + hn[i] / dt) + ou[i];
        Tridiag A = model.jacobian(uc).transpose();
        for (std::size_t i = 0; i < A.size(); ++i) A.diag[i] += g.mass(i) / dt;
        Hs.set_dofs(c - 1, A.solve(std::move(rhs)));
    }
    return Hs;
}

inline CascadeSolution solve_quasilinear_cascade(const QuasilinearModel& model, const Observation& obs,
                                                 const RegionMasks& masks, const SpaceTimeField& F,
                                                 const SpaceTimeField& v,
                                                 const SpaceTimeField* G = nullptr,
                                                 const BulkSurfaceField* psi0 = nullptr,
                                                 const NewtonOptions& opt = {}) {
    const auto& g = model.grid;
    CascadeSolution out;
    out.psi = solve_quasilinear(model, F, psi0 ? *psi0 : BulkSurfaceField(g.nodes()), &v, &masks, opt);
    const SpaceTimeField zero(g, model.time);
    out.h = solve_quasilinear_adjoint(model, obs, out.psi, G ? *G : zero);
    return out;
}

/// Linearized flow along a quasilinear trajectory:
///   M (z^c - z^{c-1})/dt + S'(u^c) z^c = 0,  z^0 = P ψ̂_0.
inline SpaceTimeField solve_sensitivity(const QuasilinearModel& model, const SpaceTimeField& U,
                                        const BulkSurfaceField& psi_hat0) {
    const auto& g = model.grid;
    const double dt = model.time.dt;
    check_shape(U, g, model.time, "solve_sensitivity");
    SpaceTimeField Z(g, model.time);
    Z.set_dofs(0, project_trace(psi_hat0, g));
    for (std::size_t c = 1; c <= model.time.steps; ++c) {
        const Vec uc = dofs_of(U, c);
        auto zp = Z.bulk(c - 1);
        Vec rhs(g.nodes());
        for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = g.mass(i) * zp[i] / dt;
        Tridiag A = model.jacobian(uc);
        for (std::size_t i = 0; i < A.size(); ++i) A.diag[i] += g.mass(i) / dt;
        Z.set_dofs(c, A.solve(std::move(rhs)));
    }
    return Z;
}

// --- diagnostics --------------------------------------------------------------------

/// ∫_Ω y + ∫_Γ y_Γ for a trace-compatible slice.
inline double total_mass(const SpaceTimeField& Y, std::size_t j, const SpatialGrid& g) {
    auto y = Y.bulk(j);
    double s = 0.0;
    for (std::size_t i = 0; i < g.nodes(); ++i) s += g.mass(i) * y[i];
    return s;
}

/// Per-step trajectory CSV: t, ||psi||, psi_G(left), psi_G(right), ||h||, h_G(left), h_G(right).
inline void write_trajectory_csv(std::ostream& os, const SpaceTimeField& psi, const SpaceTimeField& h,
                                 const SpatialGrid& g, const TimeGrid& tg) {
    const auto old = os.precision(17);
    os << "t,psi_norm,psi_gamma_left,psi_gamma_right,h_norm,h_gamma_left,h_gamma_right\n";
    for (std::size_t j = 0; j < tg.nodes(); ++j) {
        os << tg.t(j) << ',' << l2_norm(psi.slice(j), g) << ',' << psi.surface(j, 0) << ','
           << psi.surface(j, 1) << ',' << l2_norm(h.slice(j), g) << ',' << h.surface(j, 0) << ','
           << h.surface(j, 1) << '\n';
    }
    os.precision(old);
}

} // namespace insens

#pragma once

#include "insens/errors.hpp"
#include "insens/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace insens {

// --- log-space accumulation --------------------------------------------------

/// Sum of terms exp(log_w) * v (v >= 0) kept as scale * e^{log_scale}.
class LogSum {
public:
    void add(double log_w, double v) {
        if (!(v > 0.0)) return;
        const double lt = log_w + std::log(v);
        if (lt == -std::numeric_limits<double>::infinity()) return;
        if (acc_ == 0.0) {
            log_scale_ = lt;
            acc_ = 1.0;
        } else if (lt <= log_scale_) {
            acc_ += std::exp(lt - log_scale_);
        } else {
            acc_ = acc_ * std::exp(log_scale_ - lt) + 1.0;
            log_scale_ = lt;
        }
    }
    void add(const LogSum& o) {
        if (o.acc_ > 0.0) add(o.log_scale_, o.acc_);
    }
    bool zero() const { return acc_ == 0.0; }
    /// log of the sum; -inf when empty.
    double log() const {
        return acc_ == 0.0 ? -std::numeric_limits<double>::infinity() : log_scale_ + std::log(acc_);
    }
    /// May overflow to inf or underflow to 0.
    double value() const { return acc_ == 0.0 ? 0.0 : std::exp(log()); }

private:
    double log_scale_ = 0.0;
    double acc_ = 0.0;
};

/// a/b with 0/0 := 0, computed from logs.
inline double log_ratio(const LogSum& a, const LogSum& b) {
    if (a.zero()) return 0.0;
    if (b.zero()) return std::numeric_limits<double>::infinity();
    return std::exp(a.log() - b.log());
}

// --- η ----------------------------------------------------------------------

struct EtaProfile {
    double peak = 0.5;     // c, snapped to a grid node
    double curvature = 0;  // -η''(c)
    Vec values;            // η at nodes
    Vec slope;             // η' at nodes
    double floor = 0.0;    // min |η'| over nodes outside ω′

    /// Closed-form evaluation at any x in [0, L].
    struct Arc {
        double scale, alpha, beta; // P'(u) = (1-u)(alpha + beta u), u in [0,1]
    };
    Arc left{}, right{};
    double length = 1.0;

    double eval(double x) const {
        auto P = [](const Arc& a, double u) {
            // ∫_0^u (1-s)(α+βs) ds
            return a.alpha * (u - 0.5 * u * u) + a.beta * (0.5 * u * u - u * u * u / 3.0);
        };
        if (x <= peak) return P(left, x / peak);
        return P(right, (length - x) / (length - peak));
    }
    double derivative(double x) const {
        auto dP = [](const Arc& a, double u) { return (1.0 - u) * (a.alpha + a.beta * u); };
        if (x <= peak) return dP(left, x / peak) / peak;
        return -dP(right, (length - x) / (length - peak)) / (length - peak);
    }
};

/// Builds η from two monotone quintic arcs meeting at the peak c with
/// matching value, slope (zero) and curvature.
inline EtaProfile build_eta(const SpatialGrid& grid, const RegionMasks& masks, double peak) {
    if (!masks.omega1.contains(peak))
        throw GeometryError("eta: peak c = " + std::to_string(peak) + " must lie inside omega'");
    const auto node = static_cast<std::size_t>(std::lround(peak / grid.h));
    const double c = grid.x(node);
    if (!masks.omega1.contains(c))
        throw GeometryError("eta: peak snapped to node x = " + std::to_string(c) +
                            " which falls outside omega'");

    EtaProfile eta;
    eta.peak = c;
    eta.length = grid.length;
    const double L = grid.length;
    const double longest = std::max(c, L - c);
    // Normalization ∫(1-u)(α+βu) = α/2 + β/6 = 1 with α+β = κ side²; α > 0 iff κ side² < 6.
    const double kappa = 3.0 / (longest * longest);
    auto arc = [&](double side) {
        const double q1 = kappa * side * side;
        const double alpha = 3.0 - 0.5 * q1;
        return EtaProfile::Arc{side, alpha, q1 - alpha};
    };
    eta.left = arc(c);
    eta.right = arc(L - c);
    eta.curvature = kappa;

    eta.values.resize(grid.nodes());
    eta.slope.resize(grid.nodes());
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
        eta.values[i] = eta.eval(grid.x(i));
        eta.slope[i] = eta.derivative(grid.x(i));
    }
    eta.values.front() = 0.0;
    eta.values.back() = 0.0;
    eta.values[node] = 1.0;

    double floor = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
        if (masks.omega1_nodes[i]) continue;
        floor = std::min(floor, std::abs(eta.slope[i]));
        const bool monotone = (grid.x(i) < c) ? eta.slope[i] > 0.0 : eta.slope[i] < 0.0;
        if (!monotone)
            throw GeometryError("eta: arc not strictly monotone at x = " + std::to_string(grid.x(i)) +
                                " (measured floor " + std::to_string(floor) + ")");
    }
    for (std::size_t i = 1; i + 1 < grid.nodes(); ++i) {
        if (!(eta.values[i] > 0.0))
            throw GeometryError("eta: not positive at interior node " + std::to_string(i));
    }
    if (!(floor > 0.0))
        throw GeometryError("eta: inf |eta'| outside omega' is not positive (measured floor " +
                            std::to_string(floor) + ")");
    eta.floor = floor;
    return eta;
}

// --- parameters -------------------------------------------------------------

struct WeightParams {
    double s = 1.0;
    double lambda = 1.0;
    double m = 2.5;
    double clip = 700.0; // ρ_clip, natural-log scale
};

/// m must exceed log(5e^λ - 4)/λ so that max_x β < (5/4) min_x β.
inline double m_threshold(double lambda) {
    return std::log(5.0 * std::exp(lambda) - 4.0) / lambda;
}

/// s = C_s (T + T²).
inline double carleman_s(double c_s, double horizon) { return c_s * (horizon + horizon * horizon); }

inline double validate_params(const WeightParams& p) {
    if (!(p.lambda >= 1.0))
        throw ParameterError("weights: lambda must be >= 1, got " + std::to_string(p.lambda), 1.0);
    if (!(p.s > 0.0))
        throw ParameterError("weights: s must be positive, got " + std::to_string(p.s), 0.0);
    if (!(p.clip > 0.0)) throw ParameterError("weights: clip must be positive", 0.0);
    const double thr = m_threshold(p.lambda);
    if (!(p.m > 1.0) || !(p.m > thr))
        throw ParameterError("weights: m = " + std::to_string(p.m) +
                                 " must exceed log(5e^lambda - 4)/lambda = " + std::to_string(thr),
                             thr);
    return thr;
}

// --- tables -------------------------------------------------------------------

/// ℓ(t) = t(T - t) on [0, T/2], T²/4 afterwards.
inline double ell(double t, double T) { return t <= 0.5 * T ? t * (T - t) : 0.25 * T * T; }
inline double ell_prime(double t, double T) { return t <= 0.5 * T ? T - 2.0 * t : 0.0; }

/// All weights evaluated at the M cell midpoints; index c-1 holds cell c.
struct WeightTables {
    WeightParams params;
    double horizon = 1.0;
    std::size_t cells = 0;
    std::size_t nodes = 0;

    Vec t;         // midpoint times
    Vec ell, log_ell;
    Vec gamma;     // β̂/5
    Vec beta_max, beta_min;
    Vec log_mu;
    std::array<Vec, 6> log_mu_k; // μ₀ … μ₅
    std::vector<char> clamped;
    std::size_t clamped_count = 0;

    // (cell, node) tables, row-major by cell.
    Vec alpha, xi, beta, zeta;

    double alpha_at(std::size_t c, std::size_t i) const { return alpha[(c - 1) * nodes + i]; }
    double xi_at(std::size_t c, std::size_t i) const { return xi[(c - 1) * nodes + i]; }
    double beta_at(std::size_t c, std::size_t i) const { return beta[(c - 1) * nodes + i]; }
    double zeta_at(std::size_t c, std::size_t i) const { return zeta[(c - 1) * nodes + i]; }
    double log_alpha(std::size_t c, std::size_t i) const { return std::log(alpha_at(c, i)); }

    /// log μ_k for cell c (k = 0..5); k = -1 gives log μ.
    double log_weight(int k, std::size_t c) const {
        return k < 0 ? log_mu[c - 1] : log_mu_k[static_cast<std::size_t>(k)][c - 1];
    }
};

inline WeightTables build_weight_tables(const SpatialGrid& grid, const TimeGrid& tg,
                                        const EtaProfile& eta, const WeightParams& p) {
    validate_params(p);
    WeightTables w;
    w.params = p;
    w.horizon = tg.horizon;
    w.cells = tg.steps;
    w.nodes = grid.nodes();
    const std::size_t M = tg.steps;
    const double T = tg.horizon;
    const double e2 = std::exp(2.0 * p.lambda * p.m);

    Vec num(grid.nodes()), ex(grid.nodes());
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
        ex[i] = std::exp(p.lambda * (p.m + eta.values[i]));
        num[i] = e2 - ex[i];
    }
    const double num_max = *std::max_element(num.begin(), num.end());
    const double num_min = *std::min_element(num.begin(), num.end());

    w.t.resize(M);
    w.ell.resize(M);
    w.log_ell.resize(M);
    w.gamma.resize(M);
    w.beta_max.resize(M);
    w.beta_min.resize(M);
    w.log_mu.resize(M);
    for (auto& v : w.log_mu_k) v.resize(M);
    w.clamped.assign(M, 0);
    w.alpha.resize(M * grid.nodes());
    w.xi.resize(M * grid.nodes());
    w.beta.resize(M * grid.nodes());
    w.zeta.resize(M * grid.nodes());

    const double s = p.s;
    for (std::size_t c = 1; c <= M; ++c) {
        const std::size_t k = c - 1;
        const double t = tg.midpoint(c);
        const double l = ell(t, T);
        const double tt = t * (T - t);
        w.t[k] = t;
        w.ell[k] = l;
        w.log_ell[k] = std::log(l);
        for (std::size_t i = 0; i < grid.nodes(); ++i) {
            w.alpha[k * grid.nodes() + i] = num[i] / tt;
            w.xi[k * grid.nodes() + i] = ex[i] / tt;
            w.beta[k * grid.nodes() + i] = num[i] / l;
            w.zeta[k * grid.nodes() + i] = ex[i] / l;
        }
        w.beta_max[k] = num_max / l;
        w.beta_min[k] = num_min / l;
        const double g = w.beta_max[k] / 5.0;
        w.gamma[k] = g;
        const double ll = w.log_ell[k];
        double lm = 5.0 * s * g + 1.5 * ll;
        std::array<double, 6> lk{};
        lk[0] = 4.0 * s * g + 1.5 * ll;
        lk[1] = lk[0] + 2.0 * ll;
        for (int j = 2; j <= 5; ++j) lk[j] = 3.0 * s * g + 0.5 * (2.0 * j + 9.0) * ll;

        bool clamp = false;
        auto clip = [&](double v) {
            if (std::abs(v) > p.clip) {
                clamp = true;
                return std::copysign(p.clip, v);
            }
            return v;
        };
        w.log_mu[k] = clip(lm);
        for (int j = 0; j <= 5; ++j) w.log_mu_k[j][k] = clip(lk[j]);
        w.clamped[k] = clamp ? 1 : 0;
        if (clamp) {
            ++w.clamped_count;
            const bool edge = c <= 2 || c + 1 >= M;
            if (!edge)
                throw ConditioningError("weights: log-weights exceed the clamp " +
                                        std::to_string(p.clip) + " at cell " + std::to_string(c) +
                                        " (t = " + std::to_string(t) +
                                        "); weights unresolvable, reduce C_s or lambda");
        }
    }
    return w;
}

// --- elementary weight estimates ---------------------------------------------

struct ElementaryEstimates {
    double identity_error = 0.0;      // max relative error of μ₃μ₁⁻² = μ⁻¹ℓ² (log space)
    double c_ratio_t = 0.0;           // (μ₃μ₁⁻²)_t / μ⁻¹
    double c_mu3t_mu1 = 0.0;          // |μ₃,t| / μ₁
    double c_mu0_mu = 0.0;            // μ₀ / μ
    double c_mu_mu5sq = 0.0;          // μ / μ₅²
    std::array<double, 6> c_chain{};  // [k] = μ_k / μ_{k-1}, k = 1..5
    std::array<double, 6> c_chain_t{}; // [k] = |μ_k μ_{k,t}| / μ²_{k-1}, k = 2..5
};

namespace detail {
/// Centered difference in time on the midpoint grid, one-sided at the ends.
inline Vec time_derivative(const Vec& v, double dt) {
    const std::size_t M = v.size();
    Vec d(M);
    for (std::size_t k = 0; k < M; ++k) {
        if (k == 0) d[k] = (v[1] - v[0]) / dt;
        else if (k + 1 == M) d[k] = (v[k] - v[k - 1]) / dt;
        else d[k] = (v[k + 1] - v[k - 1]) / (2.0 * dt);
    }
    return d;
}
} // namespace detail

inline ElementaryEstimates check_elementary_estimates(const WeightTables& w, const TimeGrid& tg) {
    ElementaryEstimates e;
    const std::size_t M = w.cells;
    const auto& L = w.log_mu_k;
    Vec log_r(M);
    for (std::size_t k = 0; k < M; ++k) {
        if (w.clamped[k]) {
            log_r[k] = L[3][k] - 2.0 * L[1][k];
            continue;
        }
        const double lhs = L[3][k] - 2.0 * L[1][k];
        const double rhs = -w.log_mu[k] + 2.0 * w.log_ell[k];
        const double scale = std::max({1.0, std::abs(L[3][k]), std::abs(L[1][k]), std::abs(w.log_mu[k])});
        e.identity_error = std::max(e.identity_error, std::abs(lhs - rhs) / scale);
        log_r[k] = lhs;
    }
    if (e.identity_error > 1e-12)
        throw ContractError("weights: identity mu3 mu1^-2 = mu^-1 l^2 violated by " +
                            std::to_string(e.identity_error));

    const Vec dlog_r = detail::time_derivative(log_r, tg.dt);
    const Vec dlog3 = detail::time_derivative(L[3], tg.dt);
    std::array<Vec, 6> dlogk;
    for (int j = 2; j <= 5; ++j) dlogk[j] = detail::time_derivative(L[j], tg.dt);

    for (std::size_t k = 0; k < M; ++k) {
        if (w.clamped[k]) continue;
        // (μ₃μ₁⁻²)_t μ = ℓ² (log(μ₃μ₁⁻²))_t
        e.c_ratio_t = std::max(e.c_ratio_t, std::exp(log_r[k] + w.log_mu[k]) * dlog_r[k]);
        e.c_mu3t_mu1 = std::max(e.c_mu3t_mu1, std::exp(L[3][k] - L[1][k]) * std::abs(dlog3[k]));
        e.c_mu0_mu = std::max(e.c_mu0_mu, std::exp(L[0][k] - w.log_mu[k]));
        e.c_mu_mu5sq = std::max(e.c_mu_mu5sq, std::exp(w.log_mu[k] - 2.0 * L[5][k]));
        for (int j = 1; j <= 5; ++j)
            e.c_chain[j] = std::max(e.c_chain[j], std::exp(L[j][k] - L[j - 1][k]));
        for (int j = 2; j <= 5; ++j)
            e.c_chain_t[j] = std::max(e.c_chain_t[j],
                                      std::exp(2.0 * L[j][k] - 2.0 * L[j - 1][k]) * std::abs(dlogk[j][k]));
    }
    return e;
}

// --- χ ------------------------------------------------------------------------

struct ChiBump {
    Vec values, d1, d2;
};

namespace detail {
inline std::array<double, 3> smoothstep5(double u) {
    if (u <= 0.0) return {0.0, 0.0, 0.0};
    if (u >= 1.0) return {1.0, 0.0, 0.0};
    const double u2 = u * u;
    return {u2 * u * (10.0 - 15.0 * u + 6.0 * u2), 30.0 * u2 * (1.0 - u) * (1.0 - u),
            60.0 * u * (1.0 - u) * (1.0 - 2.0 * u)};
}
} // namespace detail

/// 1 on ω‴, 0 outside ω, quintic smoothstep ramps in between.
inline ChiBump build_chi(const SpatialGrid& grid, const RegionMasks& masks) {
    const double a0 = masks.omega.lo, a1 = masks.omega3.lo;
    const double b1 = masks.omega3.hi, b0 = masks.omega.hi;
    if (a1 - a0 < grid.h || b0 - b1 < grid.h)
        throw GeometryError("chi: omega''' is not compactly inside omega at grid resolution h = " +
                            std::to_string(grid.h));
    ChiBump chi;
    chi.values.resize(grid.nodes());
    chi.d1.resize(grid.nodes());
    chi.d2.resize(grid.nodes());
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
        const double x = grid.x(i);
        std::array<double, 3> v{0.0, 0.0, 0.0};
        if (x <= a0 || x >= b0) {
            v = {0.0, 0.0, 0.0};
        } else if (x < a1) {
            const double w = a1 - a0;
            auto s = detail::smoothstep5((x - a0) / w);
            v = {s[0], s[1] / w, s[2] / (w * w)};
        } else if (x > b1) {
            const double w = b0 - b1;
            auto s = detail::smoothstep5((b0 - x) / w);
            v = {s[0], -s[1] / w, s[2] / (w * w)};
        } else {
            v = {1.0, 0.0, 0.0};
        }
        chi.values[i] = v[0];
        chi.d1[i] = v[1];
        chi.d2[i] = v[2];
    }
    return chi;
}

// --- Carleman functionals -----------------------------------------------------

struct CarlemanBreakdown {
    LogSum bulk_dt, bulk_lap, bulk_grad, bulk_value;
    LogSum surf_dt, surf_lap, surf_grad, surf_value; // tangential terms are 0 in 1D
    LogSum surf_normal;
    LogSum direct_total;

    LogSum component_sum() const {
        LogSum s;
        for (const LogSum* p : {&bulk_dt, &bulk_lap, &bulk_grad, &bulk_value, &surf_dt, &surf_lap,
                                &surf_grad, &surf_value, &surf_normal})
            s.add(*p);
        return s;
    }
};

namespace detail {
struct CellSample {
    Vec value, dt, lap, grad;
    std::array<double, 2> surf_value{}, surf_dt{}, normal{};
};

/// Cell c of a trace-compatible field: mean of the two end slices and their difference quotient.
inline CellSample sample_cell(const SpaceTimeField& f, std::size_t c, const SpatialGrid& g,
                              const TimeGrid& tg) {
    CellSample s;
    auto a = f.bulk(c - 1);
    auto b = f.bulk(c);
    s.value.resize(g.nodes());
    s.dt.resize(g.nodes());
    for (std::size_t i = 0; i < g.nodes(); ++i) {
        s.value[i] = 0.5 * (a[i] + b[i]);
        s.dt[i] = (b[i] - a[i]) / tg.dt;
    }
    s.lap = sbp_laplacian(s.value, g);
    s.grad = face_gradient(s.value, g);
    for (std::size_t side = 0; side < 2; ++side) {
        s.surf_value[side] = 0.5 * (f.surface(c - 1, side) + f.surface(c, side));
        s.surf_dt[side] = (f.surface(c, side) - f.surface(c - 1, side)) / tg.dt;
    }
    s.normal = normal_derivative(s.value, g);
    return s;
}

/// Shared skeleton for I and J: weight(c,i) = log e^{-2s·w}, powers via the
/// per-cell/node "scale" x (sξ for I, ℓ^{-1} for J).
template <class LogW, class Scale>
CarlemanBreakdown carleman_generic(const SpaceTimeField& phi, const SpatialGrid& g,
                                   const TimeGrid& tg, std::size_t c1, std::size_t c2, LogW logw,
                                   Scale scale, std::array<double, 6> coef) {
    // coef: {dt/lap power coefficient, grad coef, value coef, surface value coef, normal coef, unused}
    CarlemanBreakdown out;
    const std::size_t N = g.cells;
    for (std::size_t c = std::max<std::size_t>(c1, 1); c <= c2 && c <= tg.steps; ++c) {
        const CellSample s = sample_cell(phi, c, g, tg);
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            const double lw = logw(c, i) + std::log(g.bulk_weight(i) * tg.dt);
            const double x = scale(c, i);
            const double t1 = std::log(1.0 / x) ;
            out.bulk_dt.add(lw + t1, s.dt[i] * s.dt[i]);
            out.bulk_lap.add(lw + t1, s.lap[i] * s.lap[i]);
            out.bulk_value.add(lw + std::log(coef[2] * x * x * x), s.value[i] * s.value[i]);
            out.direct_total.add(lw + t1, s.dt[i] * s.dt[i] + s.lap[i] * s.lap[i]);
            out.direct_total.add(lw + std::log(coef[2] * x * x * x), s.value[i] * s.value[i]);
        }
        for (std::size_t f = 0; f < N; ++f) {
            // Face weight: geometric mean of the two nodal weights.
            const double lw = 0.5 * (logw(c, f) + logw(c, f + 1)) + std::log(g.h * tg.dt);
            const double x = std::sqrt(scale(c, f) * scale(c, f + 1));
            out.bulk_grad.add(lw + std::log(coef[1] * x), s.grad[f] * s.grad[f]);
            out.direct_total.add(lw + std::log(coef[1] * x), s.grad[f] * s.grad[f]);
        }
        for (std::size_t side = 0; side < 2; ++side) {
            const std::size_t i = side == 0 ? 0 : N;
            const double lw = logw(c, i) + std::log(tg.dt);
            const double x = scale(c, i);
            out.surf_dt.add(lw - std::log(x), s.surf_dt[side] * s.surf_dt[side]);
            out.surf_value.add(lw + std::log(coef[3] * x * x * x), s.surf_value[side] * s.surf_value[side]);
            out.surf_normal.add(lw + std::log(coef[4] * x), s.normal[side] * s.normal[side]);
            out.direct_total.add(lw - std::log(x), s.surf_dt[side] * s.surf_dt[side]);
            out.direct_total.add(lw + std::log(coef[3] * x * x * x), s.surf_value[side] * s.surf_value[side]);
            out.direct_total.add(lw + std::log(coef[4] * x), s.normal[side] * s.normal[side]);
        }
    }
    return out;
}
} // namespace detail

/// I(Φ, s, λ, t₁, t₂) over cells c1..c2, with e^{-2sα} and powers of sξ.
inline CarlemanBreakdown carleman_functional_I(const SpaceTimeField& phi, const WeightTables& w,
                                               const SpatialGrid& g, const TimeGrid& tg,
                                               std::size_t c1, std::size_t c2) {
    const double s = w.params.s, lam = w.params.lambda;
    return detail::carleman_generic(
        phi, g, tg, c1, c2, [&](std::size_t c, std::size_t i) { return -2.0 * s * w.alpha_at(c, i); },
        [&](std::size_t c, std::size_t i) { return s * w.xi_at(c, i); },
        {1.0, lam * lam, lam * lam * lam * lam, lam * lam * lam, lam, 0.0});
}

/// J(Φ, s, λ, t₁, t₂): e^{-2sβ} with powers of ℓ (scale ℓ^{-1}).
inline CarlemanBreakdown carleman_functional_J(const SpaceTimeField& phi, const WeightTables& w,
                                               const SpatialGrid& g, const TimeGrid& tg,
                                               std::size_t c1, std::size_t c2) {
    const double s = w.params.s;
    return detail::carleman_generic(
        phi, g, tg, c1, c2, [&](std::size_t c, std::size_t i) { return -2.0 * s * w.beta_at(c, i); },
        [&](std::size_t c, std::size_t) { return 1.0 / w.ell[c - 1]; }, {1.0, 1.0, 1.0, 1.0, 1.0, 0.0});
}

} // namespace insens

#pragma once

#include "insens/errors.hpp"
#include "insens/geometry.hpp"
#include "insens/pdecore.hpp"
#include "insens/weights.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <random>
#include <vector>

namespace insens {

/// Both sides of the weighted observability inequality for one adjoint sample.
struct CarlemanSample {
    LogSum lhs_I, rhs_I; // e^{-2sα}, powers of sξ
    LogSum lhs_J, rhs_J; // e^{-2sβ}, powers of ℓ
    double ratio_I = 0.0;
    double ratio_J = 0.0;
};

struct CarlemanCheckReport {
    std::vector<CarlemanSample> samples;
    double max_ratio_I = 0.0; // empirical constant for the α-weighted form
    double max_ratio_J = 0.0; // empirical constant for the β-weighted form
};

/// Everything the check needs from a model instance.
struct CarlemanContext {
    const SpatialGrid& g;
    const TimeGrid& tg;
    const RegionMasks& masks;
    const LinearOperatorSet& ops;
    const Observation& obs;
    const WeightTables& w;
};

namespace detail {

/// Smooth random cell field: a few spatial cosines times a few temporal sines,
/// with independent smooth surface traces.
inline SpaceTimeField random_smooth_source(const SpatialGrid& g, const TimeGrid& tg, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    constexpr int kx = 4, kt = 3;
    double a[kx][kt], sl[kt], sr[kt];
    for (auto& row : a)
        for (double& v : row) v = nd(rng);
    for (int q = 0; q < kt; ++q) {
        sl[q] = nd(rng);
        sr[q] = nd(rng);
    }
    SpaceTimeField f(g, tg);
    for (std::size_t c = 1; c <= tg.steps; ++c) {
        const double tau = tg.midpoint(c) / tg.horizon;
        double st[kt];
        for (int q = 0; q < kt; ++q) st[q] = std::sin(std::numbers::pi * (q + 1) * tau);
        auto b = f.bulk(c);
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            double v = 0.0;
            for (int k = 0; k < kx; ++k) {
                const double sx = std::cos(std::numbers::pi * k * g.x(i) / g.length) / (1.0 + k);
                for (int q = 0; q < kt; ++q) v += a[k][q] * sx * st[q] / (1.0 + q);
            }
            b[i] = v;
        }
        double l = 0.0, r = 0.0;
        for (int q = 0; q < kt; ++q) {
            l += sl[q] * st[q] / (1.0 + q);
            r += sr[q] * st[q] / (1.0 + q);
        }
        f.surface(c, 0) = l;
        f.surface(c, 1) = r;
    }
    return f;
}

/// Right-hand sides of both inequalities: the localized φ term on ω‴ plus the
/// weighted source terms, midpoint rule in time, trapezoid in space.
inline void carleman_rhs(const CarlemanContext& x, const SpaceTimeField& phi, const SpaceTimeField& f1,
                         const SpaceTimeField& g1, LogSum& rhs_I, LogSum& rhs_J) {
    const auto& w = x.w;
    const double s = w.params.s, lam = w.params.lambda;
    const double l2 = lam * lam, l4 = l2 * l2, l8 = l4 * l4;
    for (std::size_t c = 1; c <= x.tg.steps; ++c) {
        const double log_ell = w.log_ell[c - 1];
        auto pa = phi.bulk(c - 1);
        auto pb = phi.bulk(c);
        auto fb = f1.bulk(c);
        auto gb = g1.bulk(c);
        for (std::size_t i = 0; i < x.g.nodes(); ++i) {
            const double q = std::log(x.g.bulk_weight(i) * x.tg.dt);
            const double la = -2.0 * s * w.alpha_at(c, i) + q;
            const double lb = -2.0 * s * w.beta_at(c, i) + q;
            const double sx = s * w.xi_at(c, i);
            if (x.masks.omega3_nodes[i]) {
                const double ph = 0.5 * (pa[i] + pb[i]);
                rhs_I.add(la + std::log(l8 * sx * sx * sx * sx * sx * sx * sx), ph * ph);
                rhs_J.add(lb - 7.0 * log_ell, ph * ph);
            }
            rhs_I.add(la + std::log(l4 * sx * sx * sx), fb[i] * fb[i]);
            rhs_I.add(la, gb[i] * gb[i]);
            rhs_J.add(lb - 3.0 * log_ell, fb[i] * fb[i]);
            rhs_J.add(lb, gb[i] * gb[i]);
        }
        for (std::size_t side = 0; side < 2; ++side) {
            const std::size_t i = side == 0 ? 0 : x.g.cells;
            const double q = std::log(x.tg.dt);
            const double la = -2.0 * s * w.alpha_at(c, i) + q;
            const double lb = -2.0 * s * w.beta_at(c, i) + q;
            const double fs = f1.surface(c, side), gs = g1.surface(c, side);
            rhs_I.add(la, fs * fs + gs * gs);
            rhs_J.add(lb, fs * fs + gs * gs);
        }
    }
}

} // namespace detail

/// Evaluates both weighted inequalities on one adjoint-cascade solution driven
/// by (f1, g1): k forward from 0, φ backward from 0 with the coupling θ k 1_O.
inline CarlemanSample carleman_sample(const CarlemanContext& x, const SpaceTimeField& f1,
                                      const SpaceTimeField& g1) {
    const BulkSurfaceField zero = lift(Vec(x.g.nodes(), 0.0));
    const SpaceTimeField k = solve_linear_forward(x.ops, g1, zero);
    const SpaceTimeField phi = solve_linear_backward(x.ops, f1 + apply_C_forward(x.obs, k, x.g), zero);

    CarlemanSample out;
    const std::size_t M = x.tg.steps;
    out.lhs_I.add(carleman_functional_I(phi, x.w, x.g, x.tg, 1, M).direct_total);
    out.lhs_I.add(carleman_functional_I(k, x.w, x.g, x.tg, 1, M).direct_total);
    out.lhs_J.add(carleman_functional_J(phi, x.w, x.g, x.tg, 1, M).direct_total);
    out.lhs_J.add(carleman_functional_J(k, x.w, x.g, x.tg, 1, M).direct_total);
    detail::carleman_rhs(x, phi, f1, g1, out.rhs_I, out.rhs_J);
    out.ratio_I = log_ratio(out.lhs_I, out.rhs_I);
    out.ratio_J = log_ratio(out.lhs_J, out.rhs_J);
    return out;
}

/// Max LHS/RHS over `sample_count` random smooth source pairs; the ratio is the
/// empirical constant of the inequality. Zero samples report 0.
inline CarlemanCheckReport empirical_carleman_check(const CarlemanContext& x, std::size_t sample_count,
                                                    std::uint64_t seed = 1) {
    CarlemanCheckReport rep;
    std::mt19937_64 rng(seed);
    for (std::size_t n = 0; n < sample_count; ++n) {
        const SpaceTimeField f1 = detail::random_smooth_source(x.g, x.tg, rng);
        const SpaceTimeField g1 = detail::random_smooth_source(x.g, x.tg, rng);
        rep.samples.push_back(carleman_sample(x, f1, g1));
        const auto& s = rep.samples.back();
        if (!std::isfinite(s.ratio_I) || !std::isfinite(s.ratio_J))
            throw ConditioningError("carleman check: non-finite ratio at sample " + std::to_string(n));
        rep.max_ratio_I = std::max(rep.max_ratio_I, s.ratio_I);
        rep.max_ratio_J = std::max(rep.max_ratio_J, s.ratio_J);
    }
    return rep;
}

/// CSV of the weight profiles per time cell, for plotting.
inline void write_weight_profile_csv(std::ostream& os, const WeightTables& w) {
    os.precision(17);
    os << "t,ell,gamma,log_mu,log_mu0,log_mu1,log_mu2,log_mu3,log_mu4,log_mu5,clamped\n";
    for (std::size_t c = 0; c < w.t.size(); ++c) {
        os << w.t[c] << ',' << w.ell[c] << ',' << w.gamma[c] << ',' << w.log_mu[c];
        for (const auto& k : w.log_mu_k) os << ',' << k[c];
        os << ',' << int(w.clamped[c]) << '\n';
    }
}

} // namespace insens

#include "insens/insense.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace insens;

namespace {

ModelConfig base_config(std::size_t M = 128) {
    ModelConfig c;
    c.cells = 64;
    c.steps = M;
    return c;
}

SpaceTimeField gaussian_source(const ModelSetup& s, double amp = 1e-3) {
    SourceSpec sp;
    sp.amplitude = amp;
    return make_source(s.g, s.tg, sp);
}

SpaceTimeField modes_source(const ModelSetup& s, std::uint64_t seed, double amp = 1e-3) {
    SourceSpec sp;
    sp.family = "modes";
    sp.seed = seed;
    sp.amplitude = amp;
    return make_source(s.g, s.tg, sp);
}

SpaceTimeField random_field(std::mt19937_64& rng, const ModelSetup& s, double amp) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    SpaceTimeField y(s.g, s.tg);
    Vec d(s.g.nodes());
    for (std::size_t j = 0; j < s.tg.nodes(); ++j) {
        for (double& x : d) x = amp * u(rng);
        y.set_dofs(j, d);
    }
    return y;
}

double rel_diff(const SpaceTimeField& a, const SpaceTimeField& b, const ModelSetup& s) {
    const double n = std::max(st_norm(a, s.g, s.tg), st_norm(b, s.g, s.tg));
    return n > 0.0 ? st_norm(a - b, s.g, s.tg) / n : 0.0;
}

} // namespace

// --- nonlinear parts ----------------------------------------------------------------

TEST(NonlinearParts, VanishAtZeroState) {
    const auto s = build_setup(base_config(32));
    const SpaceTimeField zero(s.g, s.tg);
    const auto A = nonlinear_parts_A(make_model(s), s.ops, zero, zero);
    EXPECT_EQ(A.psi_rows.max_abs(), 0.0);
    EXPECT_EQ(A.h_rows.max_abs(), 0.0);
}

TEST(NonlinearParts, VanishForLinearCoefficients) {
    auto c = base_config(32);
    c.preset = "constant";
    c.coeff.a1 = 0.3;
    c.coeff.b1 = 0.2;
    const auto s = build_setup(c);
    std::mt19937_64 rng(3);
    const auto psi = random_field(rng, s, 0.5);
    const auto h = random_field(rng, s, 0.5);
    const auto A = nonlinear_parts_A(make_model(s), s.ops, psi, h);
    EXPECT_LE(A.psi_rows.max_abs(), 1e-13 * psi.max_abs() / s.g.h);
    EXPECT_LE(A.h_rows.max_abs(), 1e-13 * h.max_abs() / s.g.h);
}

TEST(NonlinearParts, LambdaIsLinearPartMinusA) {
    const auto s = build_setup(base_config(32));
    const auto model = make_model(s);
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 3; ++trial) {
        const auto psi = random_field(rng, s, 0.3);
        const auto h = random_field(rng, s, 0.3);
        const auto v = random_field(rng, s, 0.3);
        const auto lin = apply_linear_part(s.ops, s.obs, s.masks, psi, h, v);
        const auto A = nonlinear_parts_A(model, s.ops, psi, h);
        const auto lam = apply_Lambda(model, s.obs, s.masks, psi, h, v);
        EXPECT_LE(rel_diff(lam.psi_rows, lin.psi_rows - A.psi_rows, s), 1e-12);
        EXPECT_LE(rel_diff(lam.h_rows, lin.h_rows - A.h_rows, s), 1e-12);
    }
}

TEST(NonlinearParts, FrozenDerivativeIsLinearPart) {
    // Λ′(0) applied to a direction equals the linear part: both the direct
    // quasilinear residual at a tiny amplitude and the A-derivative at 0 agree.
    const auto s = build_setup(base_config(32));
    const auto model = make_model(s);
    std::mt19937_64 rng(5);
    const auto psi = random_field(rng, s, 1.0);
    const auto h = random_field(rng, s, 1.0);
    const auto v = random_field(rng, s, 1.0);
    const SpaceTimeField zero(s.g, s.tg);
    const auto dA = apply_A_derivative(model, s.ops, zero, zero, psi, h);
    EXPECT_EQ(dA.psi_rows.max_abs(), 0.0);
    EXPECT_EQ(dA.h_rows.max_abs(), 0.0);
    const double eps = 1e-7;
    const auto lam = apply_Lambda(model, s.obs, s.masks, eps * psi, eps * h, eps * v);
    const auto lin = apply_linear_part(s.ops, s.obs, s.masks, psi, h, v);
    EXPECT_LE(rel_diff((1.0 / eps) * lam.psi_rows, lin.psi_rows, s), 1e-6);
    EXPECT_LE(rel_diff((1.0 / eps) * lam.h_rows, lin.h_rows, s), 1e-6);
}

// --- derivative of the nonlinear parts ----------------------------------------------

TEST(ADerivative, ZeroDirectionGivesZero) {
    const auto s = build_setup(base_config(32));
    std::mt19937_64 rng(2);
    const auto psi = random_field(rng, s, 0.2);
    const auto h = random_field(rng, s, 0.2);
    const SpaceTimeField zero(s.g, s.tg);
    const auto dA = apply_A_derivative(make_model(s), s.ops, psi, h, zero, zero);
    EXPECT_EQ(dA.psi_rows.max_abs(), 0.0);
    EXPECT_EQ(dA.h_rows.max_abs(), 0.0);
}

TEST(ADerivative, MatchesCentralDifferences) {
    for (const char* preset : {"logistic", "affine", "polynomial"}) {
        auto c = base_config(32);
        c.preset = preset;
        if (c.preset == "polynomial") {
            c.coeff.sigma_poly = {0.1, 0.04, 0.02, 0.01};
            c.coeff.a_poly = {0.0, 0.1, 0.3, 0.2};
            c.coeff.b_poly = {0.0, 0.0, 0.4, -0.1};
        }
        const auto s = build_setup(c);
        const auto model = make_model(s);
        std::mt19937_64 rng(17);
        const auto psi = random_field(rng, s, 0.3);
        const auto h = random_field(rng, s, 0.3);
        const auto dpsi = random_field(rng, s, 1.0);
        const auto dh = random_field(rng, s, 1.0);
        const double eps = 1e-5;
        const auto ap = nonlinear_parts_A(model, s.ops, psi + eps * dpsi, h + eps * dh);
        const auto am = nonlinear_parts_A(model, s.ops, psi - eps * dpsi, h - eps * dh);
        const auto dA = apply_A_derivative(model, s.ops, psi, h, dpsi, dh);
        const double k = 0.5 / eps;
        EXPECT_LE(rel_diff(k * (ap.psi_rows - am.psi_rows), dA.psi_rows, s), 1e-6) << preset;
        EXPECT_LE(rel_diff(k * (ap.h_rows - am.h_rows), dA.h_rows, s), 1e-6) << preset;
    }
}

TEST(ADerivative, ForwardDifferencesAreFirstOrder) {
    const auto s = build_setup(base_config(32));
    const auto model = make_model(s);
    std::mt19937_64 rng(23);
    const auto psi = random_field(rng, s, 0.3);
    const auto h = random_field(rng, s, 0.3);
    const auto dpsi = random_field(rng, s, 1.0);
    const auto dh = random_field(rng, s, 1.0);
    const auto a0 = nonlinear_parts_A(model, s.ops, psi, h);
    const auto dA = apply_A_derivative(model, s.ops, psi, h, dpsi, dh);
    auto err = [&](double eps) {
        const auto a = nonlinear_parts_A(model, s.ops, psi + eps * dpsi, h + eps * dh);
        return st_norm((1.0 / eps) * (a.h_rows - a0.h_rows) - dA.h_rows, s.g, s.tg);
    };
    const double order = std::log10(err(1e-4) / err(1e-5));
    EXPECT_NEAR(order, 1.0, 0.1);
}

// --- norms ----------------------------------------------------------------------------

TEST(Norms, ZeroAndHomogeneity) {
    const auto s = build_setup(base_config(64));
    const SpaceTimeField zero(s.g, s.tg);
    EXPECT_EQ(control_norm(zero, s.g, s.tg), 0.0);
    EXPECT_EQ(y_norm(s.weights, s.g, s.tg, zero, zero), 0.0);
    const auto F = gaussian_source(s);
    const double y1 = y_norm(s.weights, s.g, s.tg, F, zero);
    EXPECT_GT(y1, 0.0);
    EXPECT_NEAR(y_norm(s.weights, s.g, s.tg, 3.0 * F, zero), 3.0 * y1, 1e-12 * y1);
    std::mt19937_64 rng(1);
    const auto v = random_field(rng, s, 1.0);
    const double c1 = control_norm(v, s.g, s.tg);
    EXPECT_NEAR(control_norm(-2.0 * v, s.g, s.tg), 2.0 * c1, 1e-12 * c1);
}

TEST(Norms, LambdaBoundednessRatiosFinite) {
    const auto s = build_setup(base_config(64));
    const auto rep = lambda_boundedness(s, {1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0, 3.0}, 9);
    ASSERT_EQ(rep.ratios.size(), 10u);
    for (double r : rep.ratios) {
        EXPECT_TRUE(std::isfinite(r));
        EXPECT_GT(r, 0.0);
    }
    EXPECT_LT(rep.max_ratio, 1e6);
}

// --- outer loop -------------------------------------------------------------------------

TEST(Synthesis, ZeroSourceConvergesInOneStep) {
    const auto s = build_setup(base_config(64));
    const auto r = synthesize(s, SpaceTimeField(s.g, s.tg));
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.iterations, 1);
    EXPECT_EQ(r.v.max_abs(), 0.0);
    EXPECT_EQ(r.psi.max_abs(), 0.0);
    EXPECT_EQ(r.h.max_abs(), 0.0);
    EXPECT_EQ(r.h0_norm, 0.0);
}

TEST(Synthesis, LinearCoefficientsConvergeInTwoSteps) {
    auto c = base_config(64);
    c.preset = "constant";
    const auto s = build_setup(c);
    const auto r = synthesize(s, gaussian_source(s));
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.iterations, 2);
    EXPECT_LE(r.increments[1], 1e-9);
}

TEST(Synthesis, ContractsForSmallData) {
    const auto s = build_setup(base_config());
    const auto r = synthesize(s, gaussian_source(s, 1e-3));
    ASSERT_TRUE(r.converged);
    EXPECT_LE(r.iterations, 10);
    EXPECT_LE(r.max_contraction, 0.5);
    for (std::size_t k = 1; k < r.increments.size(); ++k) EXPECT_LT(r.increments[k], r.increments[k - 1]);
    EXPECT_LE(r.h0_norm, 1e-12);
    EXPECT_LE(r.fixed_point_gap, 1e-10);
    EXPECT_GT(r.control_ratio, r.linear_control_ratio / 3.0);
    EXPECT_LT(r.control_ratio, r.linear_control_ratio * 3.0);
    std::ostringstream os;
    write_history_csv(os, r);
    EXPECT_EQ(os.str().rfind("iteration,increment,h0_norm,cascade_residual\n", 0), 0u);
}

TEST(Synthesis, LargeDataRaisesSmallnessError) {
    auto c = base_config();
    c.preset = "affine";
    c.coeff.a_nl = 5.0;
    c.coeff.b_nl = 5.0;
    const auto s = build_setup(c);
    EXPECT_THROW(synthesize(s, gaussian_source(s, 3.0)), SmallnessError);
}

// --- functional -------------------------------------------------------------------------

TEST(Functional, ZeroStateGivesZero) {
    const auto s = build_setup(base_config(64));
    const SpaceTimeField zero(s.g, s.tg);
    std::mt19937_64 rng(1);
    const BulkSurfaceField d = random_direction(s.g, rng);
    EXPECT_EQ(evaluate_J(s, zero, zero, 0.0, 0.0, d), 0.0);
}

TEST(Functional, SurfaceTermDropsWithZeroWeight) {
    auto c = base_config(64);
    c.theta_gamma = 0.0;
    const auto s_on_sigma = build_setup(c);
    c.sigma = {};
    const auto s_no_sigma = build_setup(c);
    c.theta_gamma = 1.0;
    c.sigma = {Endpoint::Right};
    const auto s_weighted = build_setup(c);
    std::mt19937_64 rng(8);
    const auto psi = random_field(rng, s_on_sigma, 1.0);
    const double j0 = functional_J(s_on_sigma.obs, psi, s_on_sigma.tg);
    EXPECT_DOUBLE_EQ(j0, functional_J(s_no_sigma.obs, psi, s_no_sigma.tg));
    // Oracle: with θ_Γ = 1 the functional grows by dt/2 Σ_c ψ_Γ(right)².
    double surf = 0.0;
    for (std::size_t c2 = 1; c2 <= s_weighted.tg.steps; ++c2) surf += psi.surface(c2, 1) * psi.surface(c2, 1);
    surf *= 0.5 * s_weighted.tg.dt;
    EXPECT_NEAR(functional_J(s_weighted.obs, psi, s_weighted.tg), j0 + surf, 1e-12 * (j0 + surf));
}

TEST(Functional, BulkTermMatchesQuadrature) {
    auto c = base_config(64);
    c.theta = 2.0;
    c.theta_gamma = 0.0;
    const auto s = build_setup(c);
    std::mt19937_64 rng(9);
    const auto psi = random_field(rng, s, 1.0);
    double ref = 0.0;
    for (std::size_t k = 1; k <= s.tg.steps; ++k) {
        auto b = psi.bulk(k);
        for (std::size_t i = 0; i < s.g.nodes(); ++i)
            if (s.masks.obs_nodes[i]) ref += s.tg.dt * s.g.bulk_weight(i) * b[i] * b[i];
    }
    EXPECT_NEAR(functional_J(s.obs, psi, s.tg), ref, 1e-12 * ref);
}

// --- perturbations and helpers --------------------------------------------------------

TEST(Perturbation, RandomDirectionsHaveUnitProxyNorm) {
    const auto s = build_setup(base_config(64));
    std::mt19937_64 rng(4);
    for (int k = 0; k < 5; ++k) {
        const auto d = random_direction(s.g, rng);
        EXPECT_NEAR(h3_proxy_norm(d, s.g), 1.0, 1e-13);
        EXPECT_EQ(d.surface[0], d.bulk.front());
        EXPECT_EQ(d.surface[1], d.bulk.back());
    }
    EXPECT_THROW(normalize_direction(BulkSurfaceField(s.g.nodes()), s.g), ConfigError);
}

TEST(Perturbation, RichardsonAndFitAreExactOnPolynomials) {
    const std::vector<double> tau{2e-2, 1e-2, 5e-3};
    std::vector<double> D;
    for (double t : tau) D.push_back(0.7 + 3.0 * t * t);
    EXPECT_NEAR(detail::richardson(tau, D), 0.7, 1e-14);
    std::vector<double> t2, y;
    for (double t : tau)
        for (double sgn : {1.0, -1.0}) {
            t2.push_back(sgn * t);
            y.push_back(-0.25 * sgn * t + 4.0 * t * t);
        }
    const auto [lin, quad] = detail::fit_linear_quadratic(t2, y);
    EXPECT_NEAR(lin, -0.25, 1e-12);
    EXPECT_NEAR(quad, 4.0, 1e-9);
}

// --- duality of the sensitivity and the backward state ---------------------------------

TEST(Duality, ZeroDirectionGivesZero) {
    const auto s = build_setup(base_config(64));
    const auto model = make_model(s);
    const auto psi = solve_quasilinear(model, gaussian_source(s, 1e-2), BulkSurfaceField(s.g.nodes()));
    const auto r = duality_identity_check(model, s.obs, psi, BulkSurfaceField(s.g.nodes()));
    EXPECT_EQ(r.lhs, 0.0);
    EXPECT_EQ(r.rhs, 0.0);
}

TEST(Duality, ExactForConstantAndQuasilinearStates) {
    for (const char* preset : {"constant", "logistic"}) {
        auto c = base_config(64);
        c.preset = preset;
        const auto s = build_setup(c);
        const auto model = make_model(s);
        const auto psi = solve_quasilinear(model, gaussian_source(s, 5e-2), BulkSurfaceField(s.g.nodes()));
        std::mt19937_64 rng(12);
        for (int k = 0; k < 3; ++k) {
            const auto r = duality_identity_check(model, s.obs, psi, random_direction(s.g, rng));
            EXPECT_GT(std::abs(r.lhs), 0.0);
            EXPECT_LE(r.relative, 1e-10) << preset;
        }
    }
}

// --- insensitivity --------------------------------------------------------------------

TEST(Insensitivity, VanishingBackwardStateGivesZeroAdjoint) {
    // With zero source and zero control the state and h vanish identically,
    // so every direction sits where h(·,0) = 0.
    const auto s = build_setup(base_config(64));
    const SpaceTimeField zero(s.g, s.tg);
    std::mt19937_64 rng(2);
    const auto rep = insensitivity_check(s, zero, zero, {PerturbationSpec{random_direction(s.g, rng)}});
    EXPECT_EQ(rep.h0_norm, 0.0);
    EXPECT_EQ(rep.directions[0].adjoint_tau, 0.0);
    EXPECT_EQ(rep.directions[0].adjoint_tau_gamma, 0.0);
    EXPECT_LE(rep.max_fd, 1e-14);
    EXPECT_GT(rep.directions[0].fit.quadratic, 0.0);
}

TEST(Insensitivity, EstimatorsAgreeWithoutControl) {
    const auto s = build_setup(base_config(64));
    const auto F = gaussian_source(s, 1e-2);
    std::mt19937_64 rng(6);
    std::vector<PerturbationSpec> dirs;
    for (int k = 0; k < 3; ++k) dirs.push_back({random_direction(s.g, rng)});
    const auto rep = insensitivity_check(s, F, SpaceTimeField(s.g, s.tg), dirs);
    EXPECT_GT(rep.max_adjoint, 1e-7);
    for (const auto& d : rep.directions) {
        EXPECT_TRUE(d.agree) << d.discrepancy << " vs " << d.budget;
        EXPECT_LE(std::abs(d.fd_tau - d.adjoint_tau), 1e-6 * std::abs(d.adjoint_tau) + 1e-14);
    }
    EXPECT_TRUE(rep.warnings.empty());
}

TEST(Insensitivity, SynthesizedControlInsensitizes) {
    const auto s = build_setup(base_config());
    const auto F = modes_source(s, 3);
    const auto syn = synthesize(s, F);
    ASSERT_TRUE(syn.converged);
    std::mt19937_64 rng(5);
    std::vector<PerturbationSpec> dirs;
    for (int k = 0; k < 5; ++k) dirs.push_back({random_direction(s.g, rng)});
    const auto rep = insensitivity_check(s, F, syn.v, dirs);
    const auto raw = insensitivity_check(s, F, SpaceTimeField(s.g, s.tg), dirs);
    EXPECT_LE(rep.max_fd, 1e-4);
    EXPECT_LE(rep.max_adjoint, 1e-4);
    EXPECT_LE(rep.max_linear, 1e-4);
    EXPECT_LT(rep.max_adjoint, 1e-6 * raw.max_adjoint);
    for (const auto& d : rep.directions) {
        EXPECT_TRUE(d.agree);
        EXPECT_GT(d.fit.quadratic, 0.0);
    }
    std::ostringstream os;
    write_ladder_csv(os, rep);
    EXPECT_EQ(os.str().rfind("direction,tau,dJ\n", 0), 0u);
}

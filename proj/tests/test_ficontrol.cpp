#include "insens/ficontrol.hpp"
#include "insens/setup.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace insens;

namespace {

ModelConfig small_config(std::size_t M = 64) {
    ModelConfig c;
    c.cells = 64;
    c.steps = M;
    return c;
}

SpaceTimeField modes_source(const ModelSetup& s, std::uint64_t seed, double amp = 1e-3) {
    SourceSpec sp;
    sp.family = "modes";
    sp.seed = seed;
    sp.amplitude = amp;
    return make_source(s.g, s.tg, sp);
}

FIVector random_scaled(std::mt19937_64& rng, std::size_t len) {
    std::normal_distribution<double> nd;
    FIVector d{Vec(len), Vec(len), {}};
    for (double& x : d.a) x = nd(rng);
    for (double& x : d.b) x = nd(rng);
    return d;
}

SpaceTimeField random_field(std::mt19937_64& rng, const ModelSetup& s, std::size_t zero_slice) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    SpaceTimeField y(s.g, s.tg);
    Vec d(s.g.nodes());
    for (std::size_t j = 0; j < s.tg.nodes(); ++j) {
        if (j == zero_slice) continue;
        for (double& x : d) x = u(rng);
        y.set_dofs(j, d);
    }
    return y;
}

} // namespace

TEST(FiControl, ZeroDataGivesZeroTriple) {
    const auto s = build_setup(small_config());
    const auto p = make_fi_problem(s, SpaceTimeField(s.g, s.tg), SpaceTimeField(s.g, s.tg));
    const auto sol = solve_fi(p);
    EXPECT_EQ(sol.psi.max_abs(), 0.0);
    EXPECT_EQ(sol.h.max_abs(), 0.0);
    EXPECT_EQ(sol.v.max_abs(), 0.0);
    const auto est = verify_estimates(p, sol);
    EXPECT_EQ(est.state_control, 0.0);
    EXPECT_EQ(est.rate_regularity, 0.0);
}

TEST(FiControl, ResidualStackDefinition) {
    const auto s = build_setup(small_config(32));
    const auto p = make_fi_problem(s, SpaceTimeField(s.g, s.tg), SpaceTimeField(s.g, s.tg));
    const SpaceTimeField zero(s.g, s.tg);
    const auto r0 = apply_residual_R(p, zero, zero);
    for (double v : r0.a) EXPECT_EQ(v, 0.0);

    std::mt19937_64 rng(4);
    const auto Y = random_field(rng, s, s.tg.steps);
    const auto r = apply_residual_R(p, Y, zero);
    const auto LsY = apply_Lstar(s.ops, Y);
    const std::size_t n = s.g.nodes(), c = s.tg.steps - 1;
    const double w = std::exp(-s.weights.log_mu_k[0][c - 1]);
    for (std::size_t i = 0; i < n; ++i) EXPECT_DOUBLE_EQ(r.a[(c - 1) * n + i], w * LsY.bulk(c)[i]);

    EXPECT_THROW(apply_residual_R(p, random_field(rng, s, 0), zero), ContractError);
    EXPECT_THROW(apply_residual_R(p, zero, random_field(rng, s, s.tg.steps)), ContractError);
}

TEST(FiControl, BilinearFormSymmetricPositive) {
    const auto s = build_setup(small_config(32));
    const auto p = make_fi_problem(s, SpaceTimeField(s.g, s.tg), SpaceTimeField(s.g, s.tg));
    std::mt19937_64 rng(9);
    for (int k = 0; k < 50; ++k) {
        const auto a = apply_residual_R(p, random_field(rng, s, s.tg.steps), random_field(rng, s, 0));
        const auto b = apply_residual_R(p, random_field(rng, s, s.tg.steps), random_field(rng, s, 0));
        const double ab = fi_bilinear(p, a, b), ba = fi_bilinear(p, b, a);
        EXPECT_NEAR(ab, ba, 1e-13 * std::sqrt(fi_bilinear(p, a, a) * fi_bilinear(p, b, b)));
        EXPECT_GT(fi_bilinear(p, a, a), 0.0);
    }
}

class FiSolve : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        setup_ = new ModelSetup(build_setup(small_config(128)));
        problem_ = new FIProblem(make_fi_problem(*setup_, modes_source(*setup_, 3), SpaceTimeField(setup_->g, setup_->tg)));
        sol_ = new FISolution(solve_fi(*problem_));
    }
    static void TearDownTestSuite() {
        delete sol_;
        delete problem_;
        delete setup_;
    }
    static ModelSetup* setup_;
    static FIProblem* problem_;
    static FISolution* sol_;
};
ModelSetup* FiSolve::setup_ = nullptr;
FIProblem* FiSolve::problem_ = nullptr;
FISolution* FiSolve::sol_ = nullptr;

TEST_F(FiSolve, GalerkinOrthogonality) {
    std::mt19937_64 rng(21);
    const std::size_t len = setup_->g.nodes() * setup_->tg.steps;
    for (int k = 0; k < 20; ++k) {
        const auto gs = galerkin_check(*problem_, *sol_, random_scaled(rng, len));
        EXPECT_LE(std::abs(gs.defect), 10.0 * problem_->cg_tol * gs.x_norm * gs.d_norm);
    }
}

TEST_F(FiSolve, RecoveredTripleSolvesCascade) {
    const auto cr = cascade_residual(*problem_, *sol_);
    EXPECT_LE(cr.relative, 1e-8);
}

TEST_F(FiSolve, SupportAndEndSlices) {
    const auto& s = *setup_;
    for (std::size_t i = 0; i < s.g.nodes(); ++i) EXPECT_EQ(sol_->psi.bulk(0)[i], 0.0);
    for (std::size_t i = 0; i < s.g.nodes(); ++i) EXPECT_EQ(sol_->h.bulk(s.tg.steps)[i], 0.0);
    for (std::size_t c = 1; c <= s.tg.steps; ++c)
        for (std::size_t i = 0; i < s.g.nodes(); ++i)
            if (!s.masks.omega_nodes[i]) EXPECT_EQ(sol_->v.bulk(c)[i], 0.0);
    EXPECT_GT(sol_->v.max_abs(), 0.0);
}

TEST_F(FiSolve, EstimatesFinite) {
    const auto est = verify_estimates(*problem_, *sol_);
    for (double r : {est.state_control, est.control_rate, est.energy, est.regularity, est.rate, est.rate_regularity}) {
        EXPECT_TRUE(std::isfinite(r));
        EXPECT_GT(r, 0.0);
    }
    // the state/control bound's left side is bounded by B(x, x) = F(x), hence by ‖μF‖ via the form's coercivity.
    EXPECT_LT(est.state_control, 1e3);
}

TEST(FiControl, PcgAgreesWithAugmented) {
    ModelConfig c = small_config(32);
    c.cells = 32;
    c.margin = 0.04;
    const auto s = build_setup(c);
    const auto p = make_fi_problem(s, modes_source(s, 5), SpaceTimeField(s.g, s.tg));
    const auto a = solve_fi(p, FIMethod::Augmented);
    const auto b = solve_fi(p, FIMethod::PCG);
    EXPECT_GT(b.cg.iterations, 0);
    EXPECT_GT(b.cg.ritz_min, 0.0);
    EXPECT_GT(b.cg.pivot_min, 0.0);
    // PCG stops at its own residual floor (about 1e-8), so agreement is to a few digits less.
    EXPECT_LE(st_norm(a.psi - b.psi, s.g, s.tg), 1e-4 * st_norm(a.psi, s.g, s.tg));
    EXPECT_LE(st_norm(a.v - b.v, s.g, s.tg), 1e-4 * st_norm(a.v, s.g, s.tg));
    EXPECT_LE(cascade_residual(p, b).relative, 1e-6);
}

TEST(FiControl, NullReachUnderRefinement) {
    // Re-solving the cascade with the recovered control from zero data must
    // land on h(·,0) = 0 up to rounding, at every resolution.
    for (std::size_t M : {32u, 64u, 128u}) {
        const auto s = build_setup(small_config(M));
        const SpaceTimeField zero(s.g, s.tg);
        const auto F = modes_source(s, 3);
        const auto p = make_fi_problem(s, F, zero);
        const auto sol = solve_fi(p);
        const auto y = source_norms(s.weights, s.g, s.tg, p.F, p.G).y_norm();
        const auto cascade = solve_linearized_cascade(s.ops, s.obs, s.masks, F, zero, sol.v);
        const double h0 = l2_norm(cascade.h.slice(0), s.g);
        EXPECT_LE(sol.h0_norm, 1e-3 * y);
        EXPECT_LE(h0, 1e-3 * y);
        EXPECT_LE(h0, 1e-12 * cascade.h.max_abs()) << "M=" << M;
        EXPECT_GT(cascade.h.max_abs(), 0.0);
    }
}

TEST(FiControl, EstimatesStableUnderTimeRefinement) {
    EstimateReport r[2];
    int k = 0;
    for (std::size_t M : {64u, 128u}) {
        const auto s = build_setup(small_config(M));
        const auto p = make_fi_problem(s, modes_source(s, 8), SpaceTimeField(s.g, s.tg));
        r[k++] = verify_estimates(p, solve_fi(p));
    }
    auto stable = [](double a, double b) { return a <= 2.0 * b && b <= 2.0 * a; };
    EXPECT_TRUE(stable(r[0].state_control, r[1].state_control));
    EXPECT_TRUE(stable(r[0].control_rate, r[1].control_rate));
    EXPECT_TRUE(stable(r[0].energy, r[1].energy));
    EXPECT_TRUE(stable(r[0].regularity, r[1].regularity));
    EXPECT_TRUE(stable(r[0].rate, r[1].rate));
    EXPECT_TRUE(stable(r[0].rate_regularity, r[1].rate_regularity));
}

TEST(FiControl, TimeDerivativeEstimateGrowsWithSourceRate) {
    // F = base + a·fast, where the fast part oscillates in time: raising a raises ‖μ₄F_t‖
    // much faster than ‖μF‖, and the the time-derivative estimate left side follows.
    const auto s = build_setup(small_config(128));
    SourceSpec sp;
    sp.family = "gaussian";
    const auto base = make_source(s.g, s.tg, sp);
    SpaceTimeField fast = base;
    for (std::size_t c = 1; c <= s.tg.steps; ++c) {
        const double osc = std::sin(2.0 * std::numbers::pi * 12.0 * s.tg.midpoint(c));
        for (double& x : fast.bulk(c)) x *= osc;
        fast.surface(c, 0) *= osc;
        fast.surface(c, 1) *= osc;
    }
    double prev_lhs = 0.0, prev_ft = 0.0;
    for (double a : {0.25, 1.0, 4.0}) {
        const auto p = make_fi_problem(s, base + a * fast, SpaceTimeField(s.g, s.tg));
        const auto src = source_norms(s.weights, s.g, s.tg, p.F, p.G);
        const double lhs = verify_estimates(p, solve_fi(p)).rate_lhs.value();
        EXPECT_GT(src.mu4Ft.value(), prev_ft);
        EXPECT_GT(lhs, prev_lhs) << "a = " << a;
        prev_lhs = lhs;
        prev_ft = src.mu4Ft.value();
    }
}

TEST(FiControl, InteriorClampRejected) {
    auto s = build_setup(small_config(32));
    s.weights.clamped[10] = 1;
    const auto p = make_fi_problem(s, SpaceTimeField(s.g, s.tg), SpaceTimeField(s.g, s.tg));
    EXPECT_THROW(solve_fi(p), ConditioningError);
}

TEST(FiControl, NormsHomogeneous) {
    const auto s = build_setup(small_config(64));
    const auto p = make_fi_problem(s, modes_source(s, 2), SpaceTimeField(s.g, s.tg));
    const auto sol = solve_fi(p);
    const auto x1 = x_norm(s.weights, s.ops, s.obs, s.masks, TripleView{sol.psi, sol.h, sol.v});
    const auto psi2 = 3.0 * sol.psi, h2 = 3.0 * sol.h, v2 = 3.0 * sol.v;
    const auto x3 = x_norm(s.weights, s.ops, s.obs, s.masks, TripleView{psi2, h2, v2});
    EXPECT_NEAR(x3.norm(), 3.0 * x1.norm(), 1e-12 * x3.norm());
    const SpaceTimeField z(s.g, s.tg);
    EXPECT_EQ(x_norm(s.weights, s.ops, s.obs, s.masks, TripleView{z, z, z}).norm(), 0.0);
}

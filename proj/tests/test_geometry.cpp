#include "insens/coefficients.hpp"
#include "insens/geometry.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

using namespace insens;

namespace {

RegionMasks default_masks(const SpatialGrid& g) {
    const std::array<Endpoint, 1> sigma{Endpoint::Right};
    return build_masks(g, {0.2, 0.8}, {0.3, 0.9}, sigma, 0.02);
}

Vec random_vec(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec v(n);
    for (double& x : v) x = u(rng);
    return v;
}

} // namespace

TEST(Grid, SpacingAndBoundary) {
    const auto g = build_grid(1.0, 8);
    EXPECT_DOUBLE_EQ(g.h, 0.125);
    EXPECT_EQ(g.boundary_nodes()[0], 0u);
    EXPECT_EQ(g.boundary_nodes()[1], 8u);
    EXPECT_DOUBLE_EQ(build_grid(2.0, 16).h, 0.125);
    EXPECT_DOUBLE_EQ(build_grid(1.0, 64).x(32), 0.5);
    const auto g3 = build_grid(3.0, 7 * 11);
    EXPECT_NEAR(g3.h * 77, 3.0, 4e-16 * 3.0);
}

TEST(Grid, RejectsBadInput) {
    EXPECT_THROW(build_grid(0.0, 16), ConfigError);
    EXPECT_THROW(build_grid(-1.0, 16), ConfigError);
    EXPECT_THROW(build_grid(1.0, 7), ConfigError);
    EXPECT_THROW(build_time_grid(1.0, 4), ConfigError);
}

TEST(TimeGrid, Nodes) {
    const auto tg = build_time_grid(2.0, 8);
    EXPECT_DOUBLE_EQ(tg.t(0), 0.0);
    EXPECT_DOUBLE_EQ(tg.t(8), 2.0);
    for (std::size_t j = 1; j <= 8; ++j) EXPECT_GT(tg.t(j), tg.t(j - 1));
    EXPECT_DOUBLE_EQ(tg.midpoint(1), 0.125);
}

TEST(Masks, ShrinkExamples) {
    const auto g = build_grid(1.0, 128);
    const std::array<Endpoint, 0> none{};
    const auto m = build_masks(g, {0.3, 0.7}, {0.5, 0.9}, none, 0.02);
    EXPECT_NEAR(m.inter.lo, 0.5, 1e-15);
    EXPECT_NEAR(m.omega1.lo, 0.56, 1e-15);
    EXPECT_NEAR(m.omega1.hi, 0.64, 1e-15);

    const auto g2 = build_grid(1.0, 256);
    const auto m2 = build_masks(g2, {0.3, 0.7}, {0.3, 0.7}, none, 0.05);
    EXPECT_NEAR(m2.omega3.lo, 0.35, 1e-15);
    EXPECT_NEAR(m2.omega3.hi, 0.65, 1e-15);
}

TEST(Masks, DisjointRegionsRejected) {
    const auto g = build_grid(1.0, 64);
    const std::array<Endpoint, 0> none{};
    try {
        build_masks(g, {0.1, 0.2}, {0.8, 0.9}, none, 0.02);
        FAIL() << "expected an error";
    } catch (const GeometryError& e) {
        EXPECT_NE(std::string(e.what()).find("overlap assumption"), std::string::npos);
        EXPECT_EQ(exit_code(e.kind()), 2);
    }
}

TEST(Masks, ThinIntersectionRejected) {
    const auto g = build_grid(1.0, 16);
    const std::array<Endpoint, 0> none{};
    EXPECT_THROW(build_masks(g, {0.3, 0.5}, {0.4, 0.9}, none, 0.02), GeometryError);
    EXPECT_THROW(build_masks(g, {0.0, 0.5}, {0.1, 0.9}, none, 0.02), GeometryError);
}

TEST(Masks, Nesting) {
    const auto g = build_grid(1.0, 64);
    const auto m = default_masks(g);
    for (std::size_t i = 0; i < g.nodes(); ++i) {
        if (m.omega1_nodes[i]) EXPECT_TRUE(m.omega2_nodes[i]);
        if (m.omega2_nodes[i]) EXPECT_TRUE(m.omega3_nodes[i]);
        if (m.omega3_nodes[i]) EXPECT_TRUE(m.omega_nodes[i] && m.obs_nodes[i]);
    }
    EXPECT_TRUE(m.sigma_right);
    EXPECT_FALSE(m.sigma_left);
}

TEST(L2Inner, Examples) {
    const auto g = build_grid(1.0, 64);
    BulkSurfaceField one(g.nodes());
    for (double& v : one.bulk) v = 1.0;
    one.surface = {1.0, 1.0};
    EXPECT_NEAR(l2_inner(one, one, g), 3.0, 1e-14);
    EXPECT_EQ(l2_inner(BulkSurfaceField(g.nodes()), one, g), 0.0);

    // ∫_0^1 x dx = 1/2 exactly for the trapezoid rule; traces contribute 0 + 1.
    for (std::size_t n : {16u, 64u}) {
        const auto gn = build_grid(1.0, n);
        BulkSurfaceField x(gn.nodes()), o(gn.nodes());
        for (std::size_t i = 0; i < gn.nodes(); ++i) {
            x.bulk[i] = gn.x(i);
            o.bulk[i] = 1.0;
        }
        x.surface = {0.0, 1.0};
        o.surface = {1.0, 1.0};
        EXPECT_NEAR(l2_inner(x, o, gn), 1.5, 1.0 / (n * n));
    }
}

TEST(L2Inner, SymmetricPositive) {
    const auto g = build_grid(1.0, 32);
    std::mt19937_64 rng(7);
    for (int k = 0; k < 20; ++k) {
        BulkSurfaceField a(g.nodes()), b(g.nodes());
        a.bulk = random_vec(rng, g.nodes());
        b.bulk = random_vec(rng, g.nodes());
        a.surface = {0.3, -0.2};
        b.surface = {-1.0, 0.5};
        EXPECT_DOUBLE_EQ(l2_inner(a, b, g), l2_inner(b, a, g));
        EXPECT_GT(l2_inner(a, a, g), 0.0);
    }
}

TEST(Sbp, LinearAndConstant) {
    const auto g = build_grid(1.0, 16);
    Vec y(g.nodes()), c(g.nodes(), 3.0);
    for (std::size_t i = 0; i < g.nodes(); ++i) y[i] = g.x(i);
    const auto dn = normal_derivative(y, g);
    EXPECT_NEAR(dn[0], -1.0, 1e-13);
    EXPECT_NEAR(dn[1], 1.0, 1e-13);
    const Vec ly = sbp_laplacian(y, g);
    for (std::size_t i = 1; i < g.cells; ++i) EXPECT_NEAR(ly[i], 0.0, 1e-12);
    const auto dc = normal_derivative(c, g);
    EXPECT_EQ(dc[0], 0.0);
    EXPECT_EQ(dc[1], 0.0);
    for (double v : sbp_laplacian(c, g)) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Sbp, QuadraticExactInterior) {
    const auto g = build_grid(1.0, 32);
    Vec y(g.nodes());
    for (std::size_t i = 0; i < g.nodes(); ++i) y[i] = g.x(i) * g.x(i);
    const Vec ly = sbp_laplacian(y, g);
    // (x_{i-1}^2 - 2 x_i^2 + x_{i+1}^2)/h^2 = 2 exactly in exact arithmetic.
    for (std::size_t i = 1; i < g.cells; ++i) EXPECT_NEAR(ly[i], 2.0, 1e-9);
    // The one-sided normal derivative is exact on quadratics: -y'(0) = 0, y'(1) = 2.
    const auto dn = normal_derivative(y, g);
    EXPECT_NEAR(dn[0], 0.0, 1e-12);
    EXPECT_NEAR(dn[1], 2.0, 1e-12);
}

TEST(Sbp, DiscreteIntegrationByParts) {
    std::mt19937_64 rng(11);
    for (std::size_t n : {8u, 33u, 128u}) {
        const auto g = build_grid(1.7, n);
        for (int k = 0; k < 25; ++k) {
            const Vec y = random_vec(rng, g.nodes());
            const Vec w = random_vec(rng, g.nodes());
            const Vec ly = sbp_laplacian(y, g);
            double lhs = 0.0;
            for (std::size_t i = 0; i < g.nodes(); ++i) lhs += g.bulk_weight(i) * ly[i] * w[i];
            const auto dn = normal_derivative(y, g);
            const double rhs = -grad_inner(y, w, g) + dn[0] * w.front() + dn[1] * w.back();
            double ny = 0.0, nw = 0.0;
            for (std::size_t i = 0; i < g.nodes(); ++i) {
                ny += y[i] * y[i];
                nw += w[i] * w[i];
            }
            // Scale by the operator size so the bound is dimensionless.
            const double scale = std::sqrt(ny * nw) / (g.h * g.h) * g.h;
            EXPECT_LE(std::abs(lhs - rhs), 1e-13 * scale) << "n=" << n;
        }
    }
}

TEST(Projection, TraceCompatibleAndOrthogonal) {
    const auto g = build_grid(1.0, 16);
    std::mt19937_64 rng(3);
    BulkSurfaceField f(g.nodes());
    f.bulk = random_vec(rng, g.nodes());
    f.surface = {2.0, -3.0};
    const Vec d = project_trace(f, g);
    const auto p = lift(d);
    EXPECT_TRUE(p.trace_compatible());
    // f - Pf is orthogonal to every trace-compatible field.
    BulkSurfaceField diff = f;
    for (std::size_t i = 0; i < g.nodes(); ++i) diff.bulk[i] -= p.bulk[i];
    diff.surface[0] -= p.surface[0];
    diff.surface[1] -= p.surface[1];
    for (int k = 0; k < 5; ++k) {
        const auto t = lift(random_vec(rng, g.nodes()));
        EXPECT_NEAR(l2_inner(diff, t, g), 0.0, 1e-14);
    }
    EXPECT_NEAR(mass_inner(d, d, g), l2_inner(p, p, g), 1e-13);
}

TEST(Coefficients, PresetsValidate) {
    for (const char* name : {"constant", "affine", "logistic"}) {
        const auto c = make_coefficients(name);
        const auto chk = validate_coefficients(c);
        EXPECT_GE(chk.min_sigma, c.rho) << name;
        EXPECT_LE(chk.max_derivative_mismatch, 1e-6) << name;
        EXPECT_EQ(c.a.value(0.0), 0.0);
        EXPECT_EQ(c.b.value(0.0), 0.0);
    }
    PresetParams p;
    p.sigma_poly = {0.1, 0.02, 0.01, 0.0};
    p.a_poly = {0.0, 0.1, 0.2, 0.3};
    EXPECT_NO_THROW(validate_coefficients(make_coefficients("polynomial", p)));
}

TEST(Coefficients, Violations) {
    PresetParams p;
    p.sigma0 = 0.01;
    EXPECT_THROW(validate_coefficients(make_coefficients("constant", p)), ConfigError);
    PresetParams q;
    q.a_poly = {0.1, 0.0, 0.0, 0.0};
    EXPECT_THROW(validate_coefficients(make_coefficients("polynomial", q)), ConfigError);
    EXPECT_THROW(make_coefficients("spline"), ConfigError);
    auto bad = make_coefficients("constant");
    bad.a = ScalarFunction{[](double r) { return std::array<double, 4>{r * r, r, 2.0, 0.0}; }};
    EXPECT_THROW(validate_coefficients(bad), ConfigError);
}

#pragma once

#include "insens/coefficients.hpp"
#include "insens/errors.hpp"
#include "insens/geometry.hpp"
#include "insens/pdecore.hpp"
#include "insens/weights.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace insens {

/// Everything that defines a discrete model instance.
struct ModelConfig {
    double length = 1.0;
    std::size_t cells = 64;
    double horizon = 1.0;
    std::size_t steps = 128;

    Interval omega{0.3, 0.8};
    Interval obs{0.2, 0.7};
    std::vector<Endpoint> sigma{Endpoint::Right};
    double margin = 0.02;

    std::string preset = "logistic";
    PresetParams coeff;

    double lambda = 1.0;
    double m = 2.3;
    double c_s = 0.01;
    double clip = 700.0;
    double eta_peak = -1.0; // < 0: midpoint of ω‴

    double theta = 1.0;
    double theta_gamma = 1.0;
};

/// Grids, masks, coefficients and weight tables built from a ModelConfig.
struct ModelSetup {
    ModelConfig cfg;
    SpatialGrid g;
    TimeGrid tg;
    RegionMasks masks;
    CoefficientSet coeffs;
    LinearOperatorSet ops;
    Observation obs;
    EtaProfile eta;
    WeightTables weights;
    ChiBump chi;
};

inline ModelSetup build_setup(const ModelConfig& cfg) {
    ModelSetup s;
    s.cfg = cfg;
    s.g = build_grid(cfg.length, cfg.cells);
    s.tg = build_time_grid(cfg.horizon, cfg.steps);
    s.masks = build_masks(s.g, cfg.omega, cfg.obs, cfg.sigma, cfg.margin);
    s.coeffs = make_coefficients(cfg.preset, cfg.coeff);
    validate_coefficients(s.coeffs);
    s.ops = make_linear_operators(s.coeffs, s.g, s.tg);
    s.obs = make_observation(s.g, s.masks, cfg.theta, cfg.theta_gamma);
    const double peak = cfg.eta_peak >= 0.0 ? cfg.eta_peak : 0.5 * (s.masks.omega3.lo + s.masks.omega3.hi);
    s.eta = build_eta(s.g, s.masks, peak);
    WeightParams p;
    p.s = carleman_s(cfg.c_s, cfg.horizon);
    p.lambda = cfg.lambda;
    p.m = cfg.m;
    p.clip = cfg.clip;
    s.weights = build_weight_tables(s.g, s.tg, s.eta, p);
    s.chi = build_chi(s.g, s.masks);
    return s;
}

// --- source families ----------------------------------------------------------

/// Named analytic source families, all switched on smoothly after t_on so that
/// the weighted norms stay finite near t = 0.
struct SourceSpec {
    std::string family = "gaussian"; // zero | gaussian | modes
    double amplitude = 1e-3;
    double center = 0.5; // gaussian centre (fraction of L)
    double width = 0.1;  // gaussian width (fraction of L)
    double surface = 0.5; // surface amplitude relative to the bulk peak
    double t_on = 0.25;   // fraction of T
    double t_off = 0.9;
    int modes = 4;
    std::uint64_t seed = 1;
};

namespace detail {

/// C^2 bump on [a, b] in time: (smoothstep on/off product).
inline double time_envelope(double t, double a, double b) {
    if (t <= a || t >= b) return 0.0;
    const double u = (t - a) / (b - a);
    const double s = std::sin(std::numbers::pi * u);
    return s * s * s;
}

} // namespace detail

/// Cell source field (slices 1..M, evaluated at cell midpoints); slice 0 is zero.
inline SpaceTimeField make_source(const SpatialGrid& g, const TimeGrid& tg, const SourceSpec& spec) {
    SpaceTimeField F(g, tg);
    if (spec.family == "zero" || spec.amplitude == 0.0) return F;
    if (!(spec.t_on > 0.0) || !(spec.t_off > spec.t_on) || spec.t_off > 1.0)
        throw ConfigError("source: need 0 < t_on < t_off <= 1 (fractions of T)");
    Vec shape(g.nodes());
    double left = 0.0, right = 0.0;
    if (spec.family == "gaussian") {
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            const double z = (g.x(i) / g.length - spec.center) / spec.width;
            shape[i] = std::exp(-0.5 * z * z);
        }
        left = right = spec.surface;
    } else if (spec.family == "modes") {
        std::mt19937_64 rng(spec.seed);
        std::normal_distribution<double> nd(0.0, 1.0);
        double peak = 0.0;
        for (int k = 0; k < spec.modes; ++k) {
            const double c = nd(rng) / (1.0 + k);
            for (std::size_t i = 0; i < g.nodes(); ++i)
                shape[i] += c * std::cos(std::numbers::pi * k * g.x(i) / g.length);
        }
        for (double v : shape) peak = std::max(peak, std::abs(v));
        if (peak > 0.0)
            for (double& v : shape) v /= peak;
        left = spec.surface * nd(rng);
        right = spec.surface * nd(rng);
    } else {
        throw ConfigError("source: unknown family '" + spec.family + "' (zero|gaussian|modes)");
    }
    for (std::size_t c = 1; c <= tg.steps; ++c) {
        const double e = spec.amplitude *
                         detail::time_envelope(tg.midpoint(c), spec.t_on * tg.horizon, spec.t_off * tg.horizon);
        auto b = F.bulk(c);
        for (std::size_t i = 0; i < g.nodes(); ++i) b[i] = e * shape[i];
        F.surface(c, 0) = e * left;
        F.surface(c, 1) = e * right;
    }
    return F;
}

} // namespace insens

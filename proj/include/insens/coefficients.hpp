#pragma once

#include "insens/errors.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace insens {

/// A scalar function with derivatives up to third order, evaluated together.
struct ScalarFunction {
    std::function<std::array<double, 4>(double)> eval;

    double value(double r) const { return eval(r)[0]; }
    double d1(double r) const { return eval(r)[1]; }
    double d2(double r) const { return eval(r)[2]; }
    double d3(double r) const { return eval(r)[3]; }

    static ScalarFunction constant(double c) {
        return {[c](double) { return std::array<double, 4>{c, 0.0, 0.0, 0.0}; }};
    }
    /// c0 + c1 r + c2 r^2 + c3 r^3
    static ScalarFunction cubic(double c0, double c1, double c2, double c3) {
        return {[=](double r) {
            return std::array<double, 4>{c0 + r * (c1 + r * (c2 + r * c3)),
                                         c1 + r * (2.0 * c2 + 3.0 * c3 * r),
                                         2.0 * c2 + 6.0 * c3 * r, 6.0 * c3};
        }};
    }
    /// c0 + amp * tanh(r / width)
    static ScalarFunction tanh_saturating(double c0, double amp, double width) {
        return {[=](double r) {
            const double th = std::tanh(r / width);
            const double s2 = 1.0 - th * th; // sech^2
            const double w = width;
            return std::array<double, 4>{c0 + amp * th, amp * s2 / w,
                                         -2.0 * amp * th * s2 / (w * w),
                                         amp * (-2.0 * s2 * s2 + 4.0 * th * th * s2) / (w * w * w)};
        }};
    }
};

/// σ, δ (diffusions), a, b (reactions) and the ellipticity floor ρ.
///
/// In 1D δ never enters the discrete equations (Γ is two points) but it is
/// validated like σ.
struct CoefficientSet {
    std::string name;
    ScalarFunction sigma, delta, a, b;
    double rho = 0.0;

    double sigma0() const { return sigma.value(0.0); }
    double a1() const { return a.d1(0.0); }
    double b1() const { return b.d1(0.0); }
};

struct CoefficientCheck {
    double min_sigma = 0.0;
    double min_delta = 0.0;
    double max_derivative_mismatch = 0.0;
};

/// Checks A7/A8 and derivative consistency on [-range, range].
inline CoefficientCheck validate_coefficients(const CoefficientSet& c, double range = 1.0,
                                              int samples = 201) {
    if (!(c.rho > 0.0))
        throw ConfigError("coefficients: the ellipticity assumption requires an ellipticity floor rho > 0");
    CoefficientCheck out{1e300, 1e300, 0.0};
    const double fd_h = 1e-5;
    for (int k = 0; k < samples; ++k) {
        const double r = -range + 2.0 * range * k / (samples - 1);
        out.min_sigma = std::min(out.min_sigma, c.sigma.value(r));
        out.min_delta = std::min(out.min_delta, c.delta.value(r));
        for (const ScalarFunction* f : {&c.sigma, &c.delta, &c.a, &c.b}) {
            const auto p = f->eval(r + fd_h);
            const auto m = f->eval(r - fd_h);
            const auto v = f->eval(r);
            for (int d = 0; d < 3; ++d) {
                const double fd = (p[d] - m[d]) / (2.0 * fd_h);
                const double scale = std::max(1.0, std::abs(v[d + 1]));
                out.max_derivative_mismatch =
                    std::max(out.max_derivative_mismatch, std::abs(fd - v[d + 1]) / scale);
            }
        }
    }
    if (out.min_sigma < c.rho)
        throw ConfigError("coefficients: ellipticity assumption violated, sigma drops to " +
                          std::to_string(out.min_sigma) + " < rho = " + std::to_string(c.rho));
    if (out.min_delta < c.rho)
        throw ConfigError("coefficients: ellipticity assumption violated, delta drops to " +
                          std::to_string(out.min_delta) + " < rho = " + std::to_string(c.rho));
    if (std::abs(c.a.value(0.0)) > 1e-14 || std::abs(c.b.value(0.0)) > 1e-14)
        throw ConfigError("coefficients: the reaction assumption requires a(0) = b(0) = 0");
    if (out.max_derivative_mismatch > 1e-6)
        throw ConfigError("coefficients: supplied derivatives disagree with finite differences (" +
                          std::to_string(out.max_derivative_mismatch) + ")");
    return out;
}

struct PresetParams {
    double sigma0 = 0.1;
    double sigma1 = 0.05; // nonlinear strength of σ
    double delta0 = 0.1;
    double a1 = 0.0;      // a'(0)
    double a_nl = 0.5;    // nonlinear strength of a
    double b1 = 0.0;      // b'(0)
    double b_nl = 0.5;
    double rho = 0.02;
    std::array<double, 4> sigma_poly{0.1, 0.0, 0.0, 0.0};
    std::array<double, 4> a_poly{0.0, 0.0, 0.0, 0.0};
    std::array<double, 4> b_poly{0.0, 0.0, 0.0, 0.0};
};

/// Named presets: "constant", "affine", "logistic", "polynomial".
inline CoefficientSet make_coefficients(const std::string& preset, const PresetParams& p = {}) {
    CoefficientSet c;
    c.name = preset;
    c.rho = p.rho;
    if (preset == "constant") {
        c.sigma = ScalarFunction::constant(p.sigma0);
        c.delta = ScalarFunction::constant(p.delta0);
        c.a = ScalarFunction::cubic(0.0, p.a1, 0.0, 0.0);
        c.b = ScalarFunction::cubic(0.0, p.b1, 0.0, 0.0);
    } else if (preset == "affine") {
        c.sigma = ScalarFunction::cubic(p.sigma0, p.sigma1, 0.0, 0.0);
        c.delta = ScalarFunction::cubic(p.delta0, p.sigma1, 0.0, 0.0);
        c.a = ScalarFunction::cubic(0.0, p.a1, p.a_nl, 0.0);
        c.b = ScalarFunction::cubic(0.0, p.b1, p.b_nl, 0.0);
    } else if (preset == "logistic") {
        // Saturating diffusion; reactions a1 r + a_nl (tanh r - r) keep a'(0) = a1.
        c.sigma = ScalarFunction::tanh_saturating(p.sigma0, p.sigma1, 1.0);
        c.delta = ScalarFunction::tanh_saturating(p.delta0, p.sigma1, 1.0);
        auto sat = [](double lin, double nl) {
            const auto t = ScalarFunction::tanh_saturating(0.0, 1.0, 1.0);
            return ScalarFunction{[=](double r) {
                auto v = t.eval(r);
                return std::array<double, 4>{lin * r + nl * (v[0] - r), lin + nl * (v[1] - 1.0),
                                             nl * v[2], nl * v[3]};
            }};
        };
        c.a = sat(p.a1, p.a_nl);
        c.b = sat(p.b1, p.b_nl);
    } else if (preset == "polynomial") {
        const auto& s = p.sigma_poly;
        c.sigma = ScalarFunction::cubic(s[0], s[1], s[2], s[3]);
        c.delta = ScalarFunction::cubic(s[0], s[1], s[2], s[3]);
        c.a = ScalarFunction::cubic(p.a_poly[0], p.a_poly[1], p.a_poly[2], p.a_poly[3]);
        c.b = ScalarFunction::cubic(p.b_poly[0], p.b_poly[1], p.b_poly[2], p.b_poly[3]);
    } else {
        throw ConfigError("coefficients: unknown preset '" + preset +
                          "' (expected constant|affine|logistic|polynomial)");
    }
    return c;
}

} // namespace insens

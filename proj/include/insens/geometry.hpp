#pragma once

#include "insens/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace insens {

using Vec = std::vector<double>;

/// Uniform grid on Omega = (0, L). Gamma is the two endpoints.
struct SpatialGrid {
    double length = 1.0;
    std::size_t cells = 0; // N
    double h = 0.0;

    std::size_t nodes() const { return cells + 1; }
    double x(std::size_t i) const { return static_cast<double>(i) * h; }
    std::array<std::size_t, 2> boundary_nodes() const { return {0, cells}; }

    /// Trapezoid weight of node i (bulk measure only).
    double bulk_weight(std::size_t i) const { return (i == 0 || i == cells) ? 0.5 * h : h; }
    /// L^2 mass of a trace-compatible dof: bulk weight plus unit surface weight at the ends.
    double mass(std::size_t i) const { return (i == 0 || i == cells) ? 0.5 * h + 1.0 : h; }

    bool operator==(const SpatialGrid& o) const { return length == o.length && cells == o.cells; }
};

struct TimeGrid {
    double horizon = 1.0;
    std::size_t steps = 0; // M
    double dt = 0.0;

    std::size_t nodes() const { return steps + 1; }
    double t(std::size_t j) const { return static_cast<double>(j) * dt; }
    /// Midpoint of cell c = (t_{c-1}, t_c), c = 1..M.
    double midpoint(std::size_t c) const { return (static_cast<double>(c) - 0.5) * dt; }

    bool operator==(const TimeGrid& o) const { return horizon == o.horizon && steps == o.steps; }
};

inline SpatialGrid build_grid(double length, std::size_t cells) {
    if (!(length > 0.0) || !std::isfinite(length))
        throw ConfigError("grid: domain length L must be positive (bounded-domain assumption), got " +
                          std::to_string(length));
    if (cells < 8)
        throw ConfigError("grid: node count N must be >= 8, got " + std::to_string(cells));
    return SpatialGrid{length, cells, length / static_cast<double>(cells)};
}

inline TimeGrid build_time_grid(double horizon, std::size_t steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
        throw ConfigError("time: horizon T must be positive, got " + std::to_string(horizon));
    if (steps < 8)
        throw ConfigError("time: step count M must be >= 8, got " + std::to_string(steps));
    return TimeGrid{horizon, steps, horizon / static_cast<double>(steps)};
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    double width() const { return hi - lo; }
    bool empty() const { return !(hi > lo); }
    /// Open-interval membership.
    bool contains(double x) const { return x > lo && x < hi; }
    bool operator==(const Interval&) const = default;
};

enum class Endpoint { Left, Right };

struct RegionMasks {
    Interval omega;
    Interval obs;       // O
    Interval inter;     // omega ∩ O
    Interval omega1;    // ω′
    Interval omega2;    // ω″
    Interval omega3;    // ω‴
    bool sigma_left = false;  // Σ
    bool sigma_right = false;

    std::vector<char> omega_nodes;
    std::vector<char> obs_nodes;
    std::vector<char> omega1_nodes;
    std::vector<char> omega2_nodes;
    std::vector<char> omega3_nodes;

    bool in_sigma(std::size_t boundary_index) const {
        return boundary_index == 0 ? sigma_left : sigma_right;
    }
};

namespace detail {
inline std::vector<char> node_mask(const SpatialGrid& g, Interval iv) {
    std::vector<char> m(g.nodes(), 0);
    for (std::size_t i = 0; i < g.nodes(); ++i) m[i] = iv.contains(g.x(i)) ? 1 : 0;
    return m;
}
inline std::size_t count(const std::vector<char>& m) {
    return static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
}
inline std::string fmt(Interval iv) {
    return "(" + std::to_string(iv.lo) + ", " + std::to_string(iv.hi) + ")";
}
} // namespace detail

/// Derives the nested subregions ω′ ⋐ ω″ ⋐ ω‴ ⋐ ω ∩ O by shrinking ω ∩ O inward
/// by 3, 2 and 1 margins.
inline RegionMasks build_masks(const SpatialGrid& grid, Interval omega, Interval obs,
                               std::span<const Endpoint> sigma, double margin) {
    const double L = grid.length;
    if (omega.empty() || omega.lo <= 0.0 || omega.hi >= L)
        throw GeometryError("masks: the control-region assumption requires closure(omega) inside (0, L); omega = " +
                            detail::fmt(omega));
    if (obs.empty() || obs.lo < 0.0 || obs.hi > L)
        throw GeometryError("masks: the observation-region assumption requires O to be a nonempty open subset of (0, L); O = " +
                            detail::fmt(obs));
    if (!(margin > 0.0))
        throw GeometryError("masks: nesting margin must be positive");

    RegionMasks m;
    m.omega = omega;
    m.obs = obs;
    m.inter = Interval{std::max(omega.lo, obs.lo), std::min(omega.hi, obs.hi)};
    if (m.inter.empty())
        throw GeometryError("masks: overlap assumption violated, omega ∩ O = ∅ (omega = " + detail::fmt(omega) +
                            ", O = " + detail::fmt(obs) + ")");
    if (m.inter.width() < 6.0 * grid.h + 4.0 * margin)
        throw GeometryError("masks: omega ∩ O of width " + std::to_string(m.inter.width()) +
                            " is too thin for 6h + 4*margin = " +
                            std::to_string(6.0 * grid.h + 4.0 * margin));

    auto shrink = [&](double k) {
        return Interval{m.inter.lo + k * margin, m.inter.hi - k * margin};
    };
    m.omega3 = shrink(1.0);
    m.omega2 = shrink(2.0);
    m.omega1 = shrink(3.0);

    for (Endpoint e : sigma) {
        if (e == Endpoint::Left) m.sigma_left = true;
        else m.sigma_right = true;
    }

    m.omega_nodes = detail::node_mask(grid, m.omega);
    m.obs_nodes = detail::node_mask(grid, m.obs);
    m.omega1_nodes = detail::node_mask(grid, m.omega1);
    m.omega2_nodes = detail::node_mask(grid, m.omega2);
    m.omega3_nodes = detail::node_mask(grid, m.omega3);

    const std::pair<const char*, const std::vector<char>*> all[] = {
        {"omega", &m.omega_nodes}, {"O", &m.obs_nodes}, {"omega'", &m.omega1_nodes},
        {"omega''", &m.omega2_nodes}, {"omega'''", &m.omega3_nodes}};
    for (auto [name, mask] : all) {
        if (detail::count(*mask) < 3)
            throw GeometryError(std::string("masks: region ") + name +
                                " contains fewer than 3 grid nodes; refine the grid");
    }
    return m;
}

/// An element of L^2(Ω) × L^2(Γ): bulk nodal values and the two surface values.
struct BulkSurfaceField {
    Vec bulk;
    std::array<double, 2> surface{0.0, 0.0};

    BulkSurfaceField() = default;
    explicit BulkSurfaceField(std::size_t nodes) : bulk(nodes, 0.0) {}

    std::size_t nodes() const { return bulk.size(); }
    bool trace_compatible(double tol = 0.0) const {
        return std::abs(surface[0] - bulk.front()) <= tol &&
               std::abs(surface[1] - bulk.back()) <= tol;
    }
};

/// Trapezoid bulk integral plus the two-point surface sum.
inline double l2_inner(const BulkSurfaceField& a, const BulkSurfaceField& b,
                       const SpatialGrid& grid) {
    if (a.nodes() != grid.nodes() || b.nodes() != grid.nodes())
        throw ContractError("l2_inner: field does not live on this grid");
    double s = 0.0;
    for (std::size_t i = 0; i < grid.nodes(); ++i) s += grid.bulk_weight(i) * a.bulk[i] * b.bulk[i];
    return s + a.surface[0] * b.surface[0] + a.surface[1] * b.surface[1];
}

inline double l2_norm(const BulkSurfaceField& a, const SpatialGrid& grid) {
    return std::sqrt(l2_inner(a, a, grid));
}

// --- trace-compatible dof vectors -------------------------------------------

/// Mass inner product of trace-compatible dof vectors; equals l2_inner of the lifted fields.
inline double mass_inner(std::span<const double> a, std::span<const double> b,
                         const SpatialGrid& grid) {
    double s = 0.0;
    for (std::size_t i = 0; i < grid.nodes(); ++i) s += grid.mass(i) * a[i] * b[i];
    return s;
}

inline BulkSurfaceField lift(std::span<const double> dofs) {
    BulkSurfaceField f;
    f.bulk.assign(dofs.begin(), dofs.end());
    f.surface = {dofs.front(), dofs.back()};
    return f;
}

/// L^2-orthogonal projection onto trace-compatible fields.
inline Vec project_trace(const BulkSurfaceField& f, const SpatialGrid& grid) {
    Vec d = f.bulk;
    const double hb = 0.5 * grid.h;
    d.front() = (hb * f.bulk.front() + f.surface[0]) / (hb + 1.0);
    d.back() = (hb * f.bulk.back() + f.surface[1]) / (hb + 1.0);
    return d;
}

// --- summation-by-parts operators -------------------------------------------

/// Outward normal derivative, second-order one-sided at each end.
inline std::array<double, 2> normal_derivative(std::span<const double> y, const SpatialGrid& g) {
    const std::size_t N = g.cells;
    const double left = -(-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * g.h);
    const double right = (3.0 * y[N] - 4.0 * y[N - 1] + y[N - 2]) / (2.0 * g.h);
    return {left, right};
}

/// Discrete Laplacian with an SBP closure: for the trapezoid norm H,
/// H Δ_h = -D + B exactly, where D is the face-difference stiffness and B
/// injects the normal derivative at the two ends.
inline Vec sbp_laplacian(std::span<const double> y, const SpatialGrid& g) {
    const std::size_t N = g.cells;
    if (y.size() != g.nodes()) throw ContractError("sbp_laplacian: size mismatch");
    const double h2 = g.h * g.h;
    Vec out(g.nodes());
    for (std::size_t i = 1; i < N; ++i) out[i] = (y[i - 1] - 2.0 * y[i] + y[i + 1]) / h2;
    const auto dn = normal_derivative(y, g);
    out[0] = (2.0 / g.h) * ((y[1] - y[0]) / g.h + dn[0]);
    out[N] = (2.0 / g.h) * (-(y[N] - y[N - 1]) / g.h + dn[1]);
    return out;
}

/// Face gradients (y_{i+1} - y_i)/h, i = 0..N-1.
inline Vec face_gradient(std::span<const double> y, const SpatialGrid& g) {
    Vec out(g.cells);
    for (std::size_t i = 0; i < g.cells; ++i) out[i] = (y[i + 1] - y[i]) / g.h;
    return out;
}

/// <∇_h y, ∇_h w> = sum over faces of h * gy * gw.
inline double grad_inner(std::span<const double> y, std::span<const double> w,
                         const SpatialGrid& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.cells; ++i) s += (y[i + 1] - y[i]) * (w[i + 1] - w[i]);
    return s / g.h;
}

inline double trapezoid(std::span<const double> y, const SpatialGrid& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.nodes(); ++i) s += g.bulk_weight(i) * y[i];
    return s;
}

// --- space-time fields ------------------------------------------------------

/// Time-indexed sequence of bulk/surface fields on nodes t_0..t_M.
///
/// State fields use every slice. Cell fields (residuals, sources) store cell
/// c = (t_{c-1}, t_c) at slice c and leave slice 0 at zero.
class SpaceTimeField {
public:
    SpaceTimeField() = default;
    SpaceTimeField(std::size_t nodes, std::size_t slices)
        : nodes_(nodes), slices_(slices), bulk_(nodes * slices, 0.0), surface_(2 * slices, 0.0) {}
    SpaceTimeField(const SpatialGrid& g, const TimeGrid& tg) : SpaceTimeField(g.nodes(), tg.nodes()) {}

    std::size_t nodes() const { return nodes_; }
    std::size_t slices() const { return slices_; }

    std::span<double> bulk(std::size_t j) { return {bulk_.data() + j * nodes_, nodes_}; }
    std::span<const double> bulk(std::size_t j) const { return {bulk_.data() + j * nodes_, nodes_}; }
    double& surface(std::size_t j, std::size_t side) { return surface_[2 * j + side]; }
    double surface(std::size_t j, std::size_t side) const { return surface_[2 * j + side]; }

    BulkSurfaceField slice(std::size_t j) const {
        BulkSurfaceField f;
        auto b = bulk(j);
        f.bulk.assign(b.begin(), b.end());
        f.surface = {surface(j, 0), surface(j, 1)};
        return f;
    }
    void set_slice(std::size_t j, const BulkSurfaceField& f) {
        std::copy(f.bulk.begin(), f.bulk.end(), bulk(j).begin());
        surface(j, 0) = f.surface[0];
        surface(j, 1) = f.surface[1];
    }
    /// Writes trace-compatible dofs: bulk = d, surface = endpoint values.
    void set_dofs(std::size_t j, std::span<const double> d) {
        std::copy(d.begin(), d.end(), bulk(j).begin());
        surface(j, 0) = d.front();
        surface(j, 1) = d.back();
    }

    bool trace_compatible(double tol = 0.0) const {
        for (std::size_t j = 0; j < slices_; ++j) {
            auto b = bulk(j);
            if (std::abs(surface(j, 0) - b.front()) > tol || std::abs(surface(j, 1) - b.back()) > tol)
                return false;
        }
        return true;
    }

    SpaceTimeField& operator+=(const SpaceTimeField& o) {
        for (std::size_t k = 0; k < bulk_.size(); ++k) bulk_[k] += o.bulk_[k];
        for (std::size_t k = 0; k < surface_.size(); ++k) surface_[k] += o.surface_[k];
        return *this;
    }
    SpaceTimeField& operator-=(const SpaceTimeField& o) {
        for (std::size_t k = 0; k < bulk_.size(); ++k) bulk_[k] -= o.bulk_[k];
        for (std::size_t k = 0; k < surface_.size(); ++k) surface_[k] -= o.surface_[k];
        return *this;
    }
    SpaceTimeField& operator*=(double a) {
        for (double& v : bulk_) v *= a;
        for (double& v : surface_) v *= a;
        return *this;
    }
    friend SpaceTimeField operator+(SpaceTimeField a, const SpaceTimeField& b) { return a += b; }
    friend SpaceTimeField operator-(SpaceTimeField a, const SpaceTimeField& b) { return a -= b; }
    friend SpaceTimeField operator*(double s, SpaceTimeField a) { return a *= s; }

    double max_abs() const {
        double m = 0.0;
        for (double v : bulk_) m = std::max(m, std::abs(v));
        for (double v : surface_) m = std::max(m, std::abs(v));
        return m;
    }

private:
    std::size_t nodes_ = 0;
    std::size_t slices_ = 0;
    Vec bulk_;
    Vec surface_;
};

/// Δt-weighted pairing of two cell fields over cells 1..M.
inline double st_inner(const SpaceTimeField& a, const SpaceTimeField& b, const SpatialGrid& g,
                       const TimeGrid& tg) {
    double s = 0.0;
    for (std::size_t c = 1; c <= tg.steps; ++c) {
        double sc = 0.0;
        auto ab = a.bulk(c);
        auto bb = b.bulk(c);
        for (std::size_t i = 0; i < g.nodes(); ++i) sc += g.bulk_weight(i) * ab[i] * bb[i];
        sc += a.surface(c, 0) * b.surface(c, 0) + a.surface(c, 1) * b.surface(c, 1);
        s += sc;
    }
    return tg.dt * s;
}

inline double st_norm(const SpaceTimeField& a, const SpatialGrid& g, const TimeGrid& tg) {
    return std::sqrt(st_inner(a, a, g, tg));
}

/// Cell view of a forward state: cell c carries y^c.
inline SpaceTimeField forward_cells(const SpaceTimeField& y) {
    SpaceTimeField out(y.nodes(), y.slices());
    for (std::size_t c = 1; c < y.slices(); ++c) out.set_slice(c, y.slice(c));
    return out;
}

/// Cell view of a backward state: cell c carries w^{c-1}.
inline SpaceTimeField backward_cells(const SpaceTimeField& w) {
    SpaceTimeField out(w.nodes(), w.slices());
    for (std::size_t c = 1; c < w.slices(); ++c) out.set_slice(c, w.slice(c - 1));
    return out;
}

/// max_j ||slice j||_{L^2}, the C([0,T]; L^2) proxy.
inline double sup_norm_in_time(const SpaceTimeField& y, const SpatialGrid& g) {
    double m = 0.0;
    for (std::size_t j = 0; j < y.slices(); ++j) m = std::max(m, l2_norm(y.slice(j), g));
    return m;
}

} // namespace insens

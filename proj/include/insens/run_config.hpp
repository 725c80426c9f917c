#pragma once

#include "insens/errors.hpp"
#include "insens/insense.hpp"
#include "insens/setup.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace insens {

// Plain-text run configuration: one `key = value` per line, `#` starts a
// comment, lists are comma separated. Every key is optional; unknown keys,
// repeated keys and malformed values are rejected with the line number.
//
//   grid.length, grid.cells                   L > 0, N >= 8
//   time.horizon, time.steps                  T > 0, M >= 8
//   masks.omega, masks.obs                    lo,hi (absolute coordinates)
//   masks.sigma                               none | left | right | both
//   masks.margin
//   coefficients.preset                       constant | affine | logistic | polynomial
//   coefficients.sigma0, .sigma1, .delta0, .a1, .a_nl, .b1, .b_nl, .rho
//   coefficients.sigma_poly, .a_poly, .b_poly c0,c1,c2,c3
//   weights.lambda, .m, .c_s, .clip           s = c_s (T + T²)
//   functional.theta, .theta_gamma            θ > 0, θ_Γ >= 0
//   source.family                             zero | gaussian | modes
//   source.amplitude, .center, .width, .surface, .t_on, .t_off, .modes, .seed
//   solver.cg_tol, loop.tol, loop.max_outer
//   insensitivity.directions, insensitivity.ladder
//   output.dir, seed

struct RunConfig {
    ModelConfig model;
    SourceSpec source;
    SynthesisOptions loop;
    std::size_t directions = 5;
    std::vector<double> ladder{2e-2, 1e-2, 5e-3};
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    std::map<std::string, std::string> entries; // as read, for hashing and echo
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

/// Full-string numeric parse; std::stod alone accepts trailing garbage.
inline double parse_real(const std::string& v, const std::string& where) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected a real number, got '" + v + "'");
    }
    if (used != v.size() || !std::isfinite(x)) throw ConfigError(where + ": expected a real number, got '" + v + "'");
    return x;
}

inline std::uint64_t parse_count(const std::string& v, const std::string& where) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError(where + ": expected a non-negative integer, got '" + v + "'");
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError(where + ": integer out of range: '" + v + "'");
    }
}

inline std::vector<double> parse_reals(const std::string& v, const std::string& where, std::size_t count) {
    const auto items = split_list(v);
    if (count != 0 && items.size() != count)
        throw ConfigError(where + ": expected " + std::to_string(count) + " comma-separated values, got " +
                          std::to_string(items.size()));
    std::vector<double> out;
    for (const auto& s : items) out.push_back(parse_real(s, where));
    return out;
}

/// FNV-1a over the canonical `key=value\n` listing.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace detail

/// Applies one entry; `where` prefixes error messages.
inline void apply_entry(RunConfig& rc, const std::string& key, const std::string& value, const std::string& where) {
    using namespace detail;
    auto& m = rc.model;
    auto& c = m.coeff;
    auto& src = rc.source;
    auto real = [&](double& dst) { dst = parse_real(value, where); };
    auto count = [&](std::size_t& dst) { dst = static_cast<std::size_t>(parse_count(value, where)); };
    auto interval = [&](Interval& dst) {
        const auto v = parse_reals(value, where, 2);
        dst = Interval{v[0], v[1]};
    };
    auto poly = [&](std::array<double, 4>& dst) {
        const auto v = parse_reals(value, where, 4);
        std::copy(v.begin(), v.end(), dst.begin());
    };
    const std::map<std::string, std::function<void()>> setters{
        {"grid.length", [&] { real(m.length); }},
        {"grid.cells", [&] { count(m.cells); }},
        {"time.horizon", [&] { real(m.horizon); }},
        {"time.steps", [&] { count(m.steps); }},
        {"masks.omega", [&] { interval(m.omega); }},
        {"masks.obs", [&] { interval(m.obs); }},
        {"masks.margin", [&] { real(m.margin); }},
        {"masks.sigma",
         [&] {
             if (value == "none") m.sigma = {};
             else if (value == "left") m.sigma = {Endpoint::Left};
             else if (value == "right") m.sigma = {Endpoint::Right};
             else if (value == "both") m.sigma = {Endpoint::Left, Endpoint::Right};
             else throw ConfigError(where + ": expected none|left|right|both, got '" + value + "'");
         }},
        {"coefficients.preset", [&] { m.preset = value; }},
        {"coefficients.sigma0", [&] { real(c.sigma0); }},
        {"coefficients.sigma1", [&] { real(c.sigma1); }},
        {"coefficients.delta0", [&] { real(c.delta0); }},
        {"coefficients.a1", [&] { real(c.a1); }},
        {"coefficients.a_nl", [&] { real(c.a_nl); }},
        {"coefficients.b1", [&] { real(c.b1); }},
        {"coefficients.b_nl", [&] { real(c.b_nl); }},
        {"coefficients.rho", [&] { real(c.rho); }},
        {"coefficients.sigma_poly", [&] { poly(c.sigma_poly); }},
        {"coefficients.a_poly", [&] { poly(c.a_poly); }},
        {"coefficients.b_poly", [&] { poly(c.b_poly); }},
        {"weights.lambda", [&] { real(m.lambda); }},
        {"weights.m", [&] { real(m.m); }},
        {"weights.c_s", [&] { real(m.c_s); }},
        {"weights.clip", [&] { real(m.clip); }},
        {"functional.theta", [&] { real(m.theta); }},
        {"functional.theta_gamma", [&] { real(m.theta_gamma); }},
        {"source.family", [&] { src.family = value; }},
        {"source.amplitude", [&] { real(src.amplitude); }},
        {"source.center", [&] { real(src.center); }},
        {"source.width", [&] { real(src.width); }},
        {"source.surface", [&] { real(src.surface); }},
        {"source.t_on", [&] { real(src.t_on); }},
        {"source.t_off", [&] { real(src.t_off); }},
        {"source.modes", [&] { src.modes = static_cast<int>(parse_count(value, where)); }},
        {"source.seed", [&] { src.seed = parse_count(value, where); }},
        {"solver.cg_tol", [&] { real(rc.loop.cg_tol); }},
        {"loop.tol", [&] { real(rc.loop.loop_tol); }},
        {"loop.max_outer", [&] { rc.loop.max_outer = static_cast<int>(parse_count(value, where)); }},
        {"insensitivity.directions", [&] { count(rc.directions); }},
        {"insensitivity.ladder", [&] { rc.ladder = parse_reals(value, where, 0); }},
        {"output.dir", [&] { rc.output_dir = value; }},
        {"seed", [&] { rc.seed = parse_count(value, where); }},
    };
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    it->second();
    rc.entries[key] = value;
}

/// Checks the cross-field contracts that no single entry can see, then builds
/// the model once so that every module precondition is exercised at load.
inline void validate(const RunConfig& rc) {
    if (!(rc.loop.cg_tol > 0.0 && rc.loop.cg_tol < 1.0)) throw ConfigError("solver.cg_tol: must lie in (0, 1)");
    if (!(rc.loop.loop_tol > 0.0)) throw ConfigError("loop.tol: must be positive");
    if (rc.loop.max_outer < 1) throw ConfigError("loop.max_outer: must be at least 1");
    if (rc.ladder.empty()) throw ConfigError("insensitivity.ladder: needs at least one step");
    for (std::size_t k = 0; k < rc.ladder.size(); ++k) {
        if (!(rc.ladder[k] > 0.0)) throw ConfigError("insensitivity.ladder: steps must be positive");
        if (k > 0 && !(rc.ladder[k] < rc.ladder[k - 1]))
            throw ConfigError("insensitivity.ladder: steps must be strictly decreasing");
    }
    if (rc.source.amplitude < 0.0) throw ConfigError("source.amplitude: must be non-negative");
    if (rc.output_dir.empty()) throw ConfigError("output.dir: must not be empty");
    const ModelSetup s = build_setup(rc.model);
    (void)make_source(s.g, s.tg, rc.source);
}

inline RunConfig parse_config(std::istream& in, const std::string& name = "config") {
    RunConfig rc;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::string where = name + ":" + std::to_string(lineno);
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) throw ConfigError(where + ": empty key or value");
        if (rc.entries.count(key)) throw ConfigError(where + ": key '" + key + "' given twice");
        apply_entry(rc, key, value, where + " (" + key + ")");
    }
    return rc;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    return parse_config(in, path);
}

/// Stable hash of the entries as read: the same file content in any key order
/// hashes the same; formatting and comments do not matter.
inline std::string config_hash(const RunConfig& rc) {
    std::string canon;
    for (const auto& [k, v] : rc.entries) canon += k + "=" + v + "\n";
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(canon)));
    return buf;
}

} // namespace insens

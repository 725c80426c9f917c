#pragma once

#include "insens/diagnostics.hpp"
#include "insens/run_config.hpp"

#include "json.hpp"

#include <cstdlib>
#include <optional>
#include <string>

namespace insens {

inline constexpr int kSummarySchemaVersion = 1;

/// Output directory: command-line flag, then INSENS_OUT_DIR, then the config
/// file, then the built-in default.
inline std::string resolve_output_dir(const std::optional<std::string>& flag, const char* env, const RunConfig& rc) {
    if (flag && !flag->empty()) return *flag;
    if (env && *env) return env;
    return rc.output_dir;
}

inline std::string resolve_output_dir(const std::optional<std::string>& flag, const RunConfig& rc) {
    return resolve_output_dir(flag, std::getenv("INSENS_OUT_DIR"), rc);
}

/// JSON cannot hold inf or nan; they are written as strings so a failed run
/// still produces a readable summary.
inline nlohmann::json json_number(double v) {
    if (std::isfinite(v)) return v;
    return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

inline nlohmann::json json_numbers(const std::vector<double>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(json_number(x));
    return a;
}

/// Everything in the summary is a deterministic function of the config and
/// the seed; wall-clock timings go to a separate file.
inline nlohmann::json summary_json(const RunConfig& rc, const SynthesisReport& r, const InsensitivityReport* ins) {
    nlohmann::json j;
    j["schema_version"] = kSummarySchemaVersion;
    j["config_hash"] = config_hash(rc);
    j["seed"] = rc.seed;
    j["config"] = rc.entries;
    j["grid"] = {{"cells", rc.model.cells}, {"steps", rc.model.steps}, {"preset", rc.model.preset}};
    j["synthesis"] = {
        {"converged", r.converged},
        {"iterations", r.iterations},
        {"increments", json_numbers(r.increments)},
        {"max_contraction", json_number(r.max_contraction)},
        {"x_norm", json_number(r.x_norm)},
        {"y_norm", json_number(r.y_norm)},
        {"control_norm", json_number(r.control_norm)},
        {"control_ratio", json_number(r.control_ratio)},
        {"linear_control_ratio", json_number(r.linear_control_ratio)},
        {"h0_norm", json_number(r.h0_norm)},
        {"fixed_point_gap", json_number(r.fixed_point_gap)},
        {"fi_optimality", json_numbers(r.fi_optimality)},
        {"fi_cascade_residual", json_numbers(r.fi_cascade_residual)},
    };
    if (ins) {
        nlohmann::json dirs = nlohmann::json::array();
        for (const auto& d : ins->directions)
            dirs.push_back({{"fd_tau", json_number(d.fd_tau)},
                            {"fd_tau_gamma", json_number(d.fd_tau_gamma)},
                            {"adjoint_tau", json_number(d.adjoint_tau)},
                            {"adjoint_tau_gamma", json_number(d.adjoint_tau_gamma)},
                            {"discrepancy", json_number(d.discrepancy)},
                            {"budget", json_number(d.budget)},
                            {"agree", d.agree},
                            {"linear_coefficient", json_number(d.fit.linear)},
                            {"quadratic_coefficient", json_number(d.fit.quadratic)}});
        j["insensitivity"] = {{"h0_norm", json_number(ins->h0_norm)},
                              {"max_fd", json_number(ins->max_fd)},
                              {"max_adjoint", json_number(ins->max_adjoint)},
                              {"max_discrepancy", json_number(ins->max_discrepancy)},
                              {"max_linear_coefficient", json_number(ins->max_linear)},
                              {"ladder", rc.ladder},
                              {"directions", dirs},
                              {"warnings", ins->warnings}};
    }
    return j;
}

inline nlohmann::json check_json(const CheckResult& c, const RunConfig& rc) {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [k, v] : c.metrics) m[k] = json_number(v);
    return {{"schema_version", kSummarySchemaVersion},
            {"check", c.name},
            {"pass", c.pass},
            {"config_hash", config_hash(rc)},
            {"seed", rc.seed},
            {"metrics", m},
            {"note", c.note}};
}

} // namespace insens

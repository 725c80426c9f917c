// insensctl: command-line front end for insensitizing-control synthesis.
//
//   insensctl synthesize --config run.cfg [--out DIR] [--seed S]
//   insensctl diagnose NAME --config run.cfg [--out DIR] [--seed S]
//   insensctl sweep PARAM --values v1,v2,... --config run.cfg [--out DIR] [--seed S]
//
// Exit codes: 0 success, 1 a diagnostic check failed, 2 invalid input,
// 3 smallness violated, 4 ill conditioning, 5 internal error.

#include "insens/run_report.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace insens;

namespace {

struct CommonArgs {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, CommonArgs& a) {
    app->add_option("--config,-c", a.config, "run configuration (key = value lines)")->required();
    app->add_option("--out,-o", a.out, "output directory (overrides INSENS_OUT_DIR and output.dir)");
    app->add_option("--seed", a.seed, "random seed (overrides the config)");
}

RunConfig load(const CommonArgs& a) {
    RunConfig rc = load_config(a.config);
    if (a.seed) rc.seed = *a.seed;
    validate(rc);
    return rc;
}

fs::path prepare_dir(const CommonArgs& a, const RunConfig& rc) {
    const fs::path dir = resolve_output_dir(a.out, rc);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("output directory '" + dir.string() + "': " + ec.message());
    return dir;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw ConfigError("cannot write '" + p.string() + "'");
    os << text;
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<PerturbationSpec> directions(const RunConfig& rc, const SpatialGrid& g) {
    std::mt19937_64 rng(rc.seed);
    std::vector<PerturbationSpec> dirs;
    for (std::size_t d = 0; d < rc.directions; ++d) dirs.push_back({random_direction(g, rng), rc.ladder});
    return dirs;
}

// --- synthesize ---------------------------------------------------------------------

int cmd_synthesize(const CommonArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig rc = load(a);
    const fs::path dir = prepare_dir(a, rc);
    const ModelSetup s = build_setup(rc.model);
    const SpaceTimeField F = make_source(s.g, s.tg, rc.source);
    const double t_setup = seconds_since(t0);

    const SynthesisReport rep = synthesize(s, F, rc.loop);
    const double t_loop = seconds_since(t0) - t_setup;

    std::optional<InsensitivityReport> ins;
    if (rc.directions > 0) ins = insensitivity_check(s, F, rep.v, directions(rc, s.g));
    const double t_check = seconds_since(t0) - t_setup - t_loop;

    write_file(dir / "summary.json", dump(summary_json(rc, rep, ins ? &*ins : nullptr)));
    std::ostringstream hist;
    write_history_csv(hist, rep);
    write_file(dir / "history.csv", hist.str());
    if (ins) {
        std::ostringstream lad;
        write_ladder_csv(lad, *ins);
        write_file(dir / "ladder.csv", lad.str());
    }
    write_file(dir / "timings.json", dump({{"setup_seconds", t_setup},
                                           {"synthesis_seconds", t_loop},
                                           {"insensitivity_seconds", t_check},
                                           {"total_seconds", seconds_since(t0)}}));

    std::cout << "iterations " << rep.iterations << (rep.converged ? " (converged)" : " (not converged)")
              << ", max contraction " << fmt_sci(rep.max_contraction) << ", ||v||/||F||_Y "
              << fmt_sci(rep.control_ratio) << ", ||h(0)|| " << fmt_sci(rep.h0_norm) << "\n";
    if (ins) {
        std::cout << "insensitivity: max |dJ/dtau| " << fmt_sci(ins->max_fd) << ", max adjoint "
                  << fmt_sci(ins->max_adjoint) << "\n";
        for (const auto& w : ins->warnings) std::cerr << "warning: " << w << "\n";
    }
    std::cout << "wrote " << dir.string() << "\n";
    if (!rep.converged)
        throw SmallnessError("synthesize: outer loop did not reach loop.tol = " + fmt_sci(rc.loop.loop_tol) +
                             " within loop.max_outer = " + std::to_string(rc.loop.max_outer) + " steps");
    return 0;
}

// --- diagnose -----------------------------------------------------------------------

const std::vector<std::string> kChecks{"duality",   "conservation", "convergence", "optimality",
                                       "null-reach", "estimates",    "carleman",    "gradient",
                                       "contraction", "insensitivity", "uniqueness"};

CheckResult run_check(const std::string& name, const RunConfig& rc) {
    const ModelSetup s = build_setup(rc.model);
    const std::uint64_t seed = rc.seed;
    if (name == "duality") return check_duality(s, 100, seed);
    if (name == "conservation") return check_conservation(s);
    if (name == "convergence") return check_convergence();
    if (name == "null-reach") return check_null_reach(rc.model, {64, 128, 256}, seed);
    if (name == "estimates") return check_estimates(rc.model, 10, seed);
    if (name == "carleman") return check_carleman(rc.model, 50, seed);
    if (name == "gradient") return check_gradient(rc.model, seed);
    if (name == "contraction") return check_contraction(s, 5, rc.source.amplitude, seed);
    if (name == "uniqueness") return check_uniqueness(s, 0.1, 0.05, seed);
    const SpaceTimeField F = make_source(s.g, s.tg, rc.source);
    if (name == "optimality") return check_fi_optimality(s, F, 20, seed);
    if (name == "insensitivity") return check_insensitivity(s, F, rc.directions, seed);
    throw ContractError("diagnose: unhandled check '" + name + "'");
}

int cmd_diagnose(const CommonArgs& a, const std::string& name) {
    const RunConfig rc = load(a);
    const fs::path dir = prepare_dir(a, rc);
    const CheckResult r = run_check(name, rc);
    write_file(dir / ("diagnose-" + name + ".json"), dump(check_json(r, rc)));
    std::cout << (r.pass ? "PASS " : "FAIL ") << name << "\n";
    for (const auto& [k, v] : r.metrics) std::cout << "  " << k << " = " << fmt_sci(v) << "\n";
    if (!r.note.empty()) std::cout << "  note: " << r.note << "\n";
    return r.pass ? 0 : 1;
}

// --- sweep --------------------------------------------------------------------------

const std::map<std::string, std::string> kSweepKeys{
    {"amplitude", "source.amplitude"}, {"N", "grid.cells"},     {"M", "time.steps"},
    {"lambda", "weights.lambda"},      {"C_s", "weights.c_s"}, {"theta_gamma", "functional.theta_gamma"}};

std::string status_of(ErrorKind k) {
    switch (k) {
        case ErrorKind::Validation: return "invalid";
        case ErrorKind::Smallness: return "smallness";
        case ErrorKind::Conditioning: return "conditioning";
        case ErrorKind::Internal: return "internal";
    }
    return "internal";
}

int cmd_sweep(const CommonArgs& a, const std::string& param, const std::vector<std::string>& values) {
    const RunConfig base = load(a);
    const fs::path dir = prepare_dir(a, base);
    const std::string key = kSweepKeys.at(param);

    std::ostringstream csv;
    csv.precision(17);
    csv << "param,value,status,iterations,converged,max_contraction,x_norm,y_norm,control_norm,control_ratio,"
           "h0_norm\n";
    int failures = 0;
    for (const auto& value : values) {
        csv << param << ',' << value << ',';
        RunConfig rc = base;
        try {
            rc.entries.erase(key);
            apply_entry(rc, key, value, "--values (" + key + ")");
            validate(rc);
            const ModelSetup s = build_setup(rc.model);
            const SpaceTimeField F = make_source(s.g, s.tg, rc.source);
            const SynthesisReport r = synthesize(s, F, rc.loop);
            csv << (r.converged ? "ok" : "not-converged") << ',' << r.iterations << ',' << (r.converged ? 1 : 0)
                << ',' << r.max_contraction << ',' << r.x_norm << ',' << r.y_norm << ',' << r.control_norm << ','
                << r.control_ratio << ',' << r.h0_norm << '\n';
            if (!r.converged) ++failures;
        } catch (const Error& e) {
            ++failures;
            csv << status_of(e.kind()) << ",,,,,,,,\n";
            std::cerr << param << " = " << value << ": " << e.what() << "\n";
        }
    }
    write_file(dir / ("sweep-" + param + ".csv"), csv.str());
    std::cout << "swept " << param << " over " << values.size() << " values, " << failures
              << " without convergence; wrote " << (dir / ("sweep-" + param + ".csv")).string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Insensitizing-control synthesis for a bulk-surface quasilinear parabolic system"};
    app.require_subcommand(1);

    CommonArgs syn_args, diag_args, sweep_args;
    auto* syn = app.add_subcommand("synthesize", "run the outer loop and the insensitivity check");
    add_common(syn, syn_args);

    std::string check;
    auto* diag = app.add_subcommand("diagnose", "run one verification check");
    diag->add_option("check", check, "check name")->required()->check(CLI::IsMember(kChecks));
    add_common(diag, diag_args);

    std::string param;
    std::vector<std::string> values;
    auto* sweep = app.add_subcommand("sweep", "synthesize over a list of parameter values");
    std::vector<std::string> sweep_names;
    for (const auto& [k, v] : kSweepKeys) sweep_names.push_back(k);
    sweep->add_option("param", param, "parameter to vary")->required()->check(CLI::IsMember(sweep_names));
    sweep->add_option("--values", values, "comma-separated values")->required()->delimiter(',');
    add_common(sweep, sweep_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_code(ErrorKind::Validation);
    }

    try {
        if (*syn) return cmd_synthesize(syn_args);
        if (*diag) return cmd_diagnose(diag_args, check);
        return cmd_sweep(sweep_args, param, values);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return exit_code(ErrorKind::Internal);
    }
}

// ncs: optimal control and stabilizability for delayed Markov-loss channels.
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ncs/ncs.hpp"

namespace {

enum class LogLevel { Quiet, Info, Debug };

LogLevel g_level = LogLevel::Info;

void log(LogLevel lvl, const std::string& msg) {
    if (lvl == LogLevel::Quiet || static_cast<int>(lvl) > static_cast<int>(g_level)) return;
    std::cerr << (lvl == LogLevel::Debug ? "[debug] " : "[info] ") << msg << "\n";
}

LogLevel parse_log_level() {
    const char* v = std::getenv("NCS_LOG");
    if (!v || !*v) return LogLevel::Info;
    const std::string s(v);
    if (s == "quiet") return LogLevel::Quiet;
    if (s == "info") return LogLevel::Info;
    if (s == "debug") return LogLevel::Debug;
    throw ncs::Error("BadEnvironment", "NCS_LOG must be quiet, info or debug");
}

struct Options {
    std::string config;
    std::optional<int> horizon, steps, traj, max_iter;
    std::optional<double> tol;
    std::optional<std::uint64_t> seed;
    std::string out;
};

// Command-line flags override the params block of the config.
template <class T>
T pick(const std::optional<T>& flag, const std::optional<T>& cfg, T fallback) {
    return flag ? *flag : cfg ? *cfg : fallback;
}

void emit(const std::string& text, const std::string& path) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(path);
    if (!f) throw ncs::Error("IoError", "cannot write " + path);
    f << text;
}

int cmd_solve(const ncs::RunConfig& cfg, const Options& o) {
    const double tol = pick(o.tol, cfg.params.tol, 1e-11);
    const int max_iter = pick(o.max_iter, cfg.params.max_iter, 200000);
    const auto sol = ncs::solve_stationary(cfg.model, tol, max_iter);
    log(LogLevel::Info, "value iteration stopped after " + std::to_string(sol.meta.iterations) + " sweeps");
    if (!sol.meta.converged)
        throw ncs::Error("NotConverged", sol.meta.diverged ? "value iteration diverged" : "max_iter reached");
    emit(ncs::dump(ncs::solve_report(sol, cfg.model)), o.out);
    return 0;
}

int cmd_check(const ncs::RunConfig& cfg, const Options& o) {
    if (!ncs::exact_observability(cfg.model.A, cfg.model.Q))
        throw ncs::Error("ObservabilityNotSatisfied", "(A, Q^{1/2}) is not exactly observable");
    const double tol = pick(o.tol, cfg.params.tol, 1e-11);
    const int max_iter = pick(o.max_iter, cfg.params.max_iter, 200000);
    const auto sol = ncs::solve_stationary(cfg.model, tol, max_iter);
    log(LogLevel::Info, "value iteration stopped after " + std::to_string(sol.meta.iterations) + " sweeps");
    if (sol.meta.diverged) {
        emit(ncs::dump(ncs::diverged_check_report(sol)), o.out);
        return 2;
    }
    if (!sol.meta.converged) throw ncs::Error("NotConverged", "max_iter reached without convergence");
    const auto cert = ncs::certify(sol, cfg.model);
    emit(ncs::dump(ncs::check_report(sol, cert)), o.out);
    return cert.verdict == ncs::Verdict::Stabilizable ? 0 : 2;
}

int cmd_simulate(const ncs::RunConfig& cfg, const Options& o) {
    const double tol = pick(o.tol, cfg.params.tol, 1e-11);
    const int max_iter = pick(o.max_iter, cfg.params.max_iter, 200000);
    const int steps = pick(o.steps, cfg.params.steps, 60);
    const int traj = pick(o.traj, cfg.params.traj, 10000);
    const std::uint64_t seed = pick(o.seed, cfg.params.seed, std::uint64_t{1});
    const auto sol = ncs::solve_stationary(cfg.model, tol, max_iter);
    const ncs::GainLaw law = ncs::receding_gain(sol);
    const char* source = sol.meta.converged ? "stationary" : "receding";
    log(LogLevel::Info, std::string("simulating with the ") + source + " gain law");
    const auto op = ncs::moment_operator(cfg.model, law);
    const auto t0 = std::chrono::steady_clock::now();
    const auto st = ncs::simulate(cfg.model, law, steps, traj, seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log(LogLevel::Debug, "simulation took " + std::to_string(secs) + " s");

    ncs::json summary;
    summary["spec_version"] = 1;
    summary["command"] = "simulate";
    summary["gain_source"] = source;
    summary["steps"] = st.steps;
    summary["n_traj"] = st.n_traj;
    summary["seed"] = st.master_seed;
    summary["cost_mean"] = st.cost_mean;
    summary["cost_stderr"] = st.cost_stderr;
    summary["spectral_radius"] = op.radius;
    summary["n_diverged"] = st.n_diverged;
    emit(ncs::exx_csv(st), o.out);
    // The summary goes to stdout unless stdout already carries the CSV.
    (o.out.empty() ? std::cerr : std::cout) << ncs::dump(summary);
    return 0;
}

int cmd_verify(const ncs::RunConfig& cfg, const Options& o) {
    const int N = pick(o.horizon, cfg.params.horizon, 50);
    const double tol = pick(o.tol, cfg.params.tol, 1e-11);
    const int max_iter = pick(o.max_iter, cfg.params.max_iter, 200000);
    constexpr double kGate = 1e-8;
    const auto rep = ncs::run_verify(cfg.model, N, tol, max_iter);
    for (const auto& s : rep.skipped) log(LogLevel::Info, "skipped " + s);
    emit(ncs::dump(ncs::verify_json(rep, kGate)), o.out);
    return rep.worst() <= kGate ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimal control and mean-square stabilizability over a delayed Markov-loss channel"};
    app.require_subcommand(1);
    Options o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON configuration")->required();
        sub->add_option("--horizon", o.horizon, "finite horizon N");
        sub->add_option("--tol", o.tol, "value-iteration tolerance");
        sub->add_option("--max-iter", o.max_iter, "value-iteration sweep limit");
        sub->add_option("--steps", o.steps, "simulation steps K");
        sub->add_option("--traj", o.traj, "number of trajectories");
        sub->add_option("--seed", o.seed, "master seed");
        sub->add_option("--out", o.out, "output path (stdout when omitted)");
    };
    CLI::App* solve = app.add_subcommand("solve", "stationary solution report");
    CLI::App* check = app.add_subcommand("check", "stabilizability certificate");
    CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo E[x'x] curve as CSV");
    CLI::App* verify = app.add_subcommand("verify", "cross-check the solver against its oracles");
    for (CLI::App* sub : {solve, check, simulate, verify}) add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        g_level = parse_log_level();
        const ncs::RunConfig cfg = ncs::load_config(o.config);
        log(LogLevel::Debug, "loaded " + o.config + " (n=" + std::to_string(cfg.model.n()) +
                                 ", m=" + std::to_string(cfg.model.m()) + ", d=" + std::to_string(cfg.model.d) + ")");
        if (o.horizon && *o.horizon < 0) throw ncs::Error("BadHorizon", "horizon must be nonnegative");
        if (*solve) return cmd_solve(cfg, o);
        if (*check) return cmd_check(cfg, o);
        if (*simulate) return cmd_simulate(cfg, o);
        return cmd_verify(cfg, o);
    } catch (const ncs::Error& e) {
        std::cout << ncs::dump(ncs::error_json(e.code(), e.detail()));
        log(LogLevel::Info, e.what());
        return 1;
    } catch (const std::exception& e) {
        std::cout << ncs::dump(ncs::error_json("InternalError", e.what()));
        return 1;
    }
}

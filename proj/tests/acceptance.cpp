// Acceptance run: one PASS/FAIL line per criterion, with sub-lines for each check.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "test_support.hpp"

using namespace ncs;
using namespace ncs::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Criterion {
    int id;
    std::string title;
    std::vector<std::pair<bool, std::string>> subs;

    void check(bool ok, const std::string& what) { subs.emplace_back(ok, what); }
    bool passed() const {
        for (const auto& s : subs)
            if (!s.first) return false;
        return !subs.empty();
    }
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string near_line(const std::string& name, double got, double want, double tol) {
    return name + " = " + fmt(got) + " (target " + fmt(want) + ", tol " + fmt(tol) + ")";
}

void near(Criterion& c, const std::string& name, double got, double want, double tol) {
    c.check(std::isfinite(got) && std::abs(got - want) <= tol, near_line(name, got, want, tol));
}

int cli_exit(const std::string& args, std::string* out = nullptr) {
    const std::string cmd = std::string(NCS_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return -1;
    std::string text;
    char buf[4096];
    std::size_t got;
    while ((got = fread(buf, 1, sizeof buf, p)) > 0) text.append(buf, got);
    const int status = pclose(p);
    if (out) *out = text;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string example_path(const char* name) { return std::string(NCS_EXAMPLES_DIR) + "/" + name; }

double margin_of(const StabilizabilityCertificate& cert, std::vector<int> modes) {
    for (const Margin& m : cert.margins)
        if (m.modes == modes) return m.min_eig;
    return std::nan("");
}

double scaled(double a, double b) { return std::abs(a - b) / (1.0 + std::abs(b)); }

Criterion example1_values() {
    Criterion c{1, "Example 1 stationary values", {}};
    const auto t0 = Clock::now();
    const StationarySolution sol = solve_stationary(example1());
    const double dt = seconds_since(t0);
    c.check(sol.meta.converged, "value iteration converged in " + std::to_string(sol.meta.iterations) + " sweeps");
    near(c, "P_0", sol.P[0](0, 0), 5.0023, 1e-3);
    near(c, "P_1", sol.P[1](0, 0), 4.9675, 1e-3);
    near(c, "Gamma_0", sol.Gamma(0)(0, 0), 2.9538, 1e-3);
    near(c, "Gamma_1", sol.Gamma(1)(0, 0), 2.9928, 1e-3);
    near(c, "M0_0", sol.M(0, 0)(0, 0), 1.7067, 1e-3);
    near(c, "M0_1", sol.M(0, 1)(0, 0), 1.7450, 1e-3);
    near(c, "M1_0", sol.M(1, 0)(0, 0), 0.7746, 1e-3);
    near(c, "M1_1", sol.M(1, 1)(0, 0), 0.9683, 1e-3);
    near(c, "F1_0", sol.F[0][0](0, 0), 1.5394, 1e-3);
    near(c, "F1_1", sol.F[0][1](0, 0), 1.9192, 1e-3);
    c.check(dt < 1.0, "runtime " + fmt(dt) + " s < 1 s");
    return c;
}

Criterion example1_certificate() {
    Criterion c{2, "Example 1 certificate and gains", {}};
    const SystemModel s = example1();
    const StationarySolution sol = solve_stationary(s);
    const StabilizabilityCertificate cert = certify(sol, s);
    // modes are (m_{-1}, m_0): P_{m_0} paired with Gamma_{m_{-1}}
    near(c, "margin P0/Gamma0", margin_of(cert, {0, 0}), 4.2000, 1e-3);
    near(c, "margin P0/Gamma1", margin_of(cert, {1, 0}), 4.2105, 1e-3);
    near(c, "margin P1/Gamma0", margin_of(cert, {0, 1}), 3.7207, 1e-3);
    near(c, "margin P1/Gamma1", margin_of(cert, {1, 1}), 3.7368, 1e-3);
    c.check(cert.verdict == Verdict::Stabilizable, std::string("verdict ") + verdict_name(cert.verdict));
    const GainLaw law = stationary_gain(sol);
    near(c, "mode-0 state gain", law.K0[0](0, 0), 0.5778, 1e-3);
    near(c, "mode-0 history gain", law.Kj[0][0](0, 0), 0.2622, 1e-3);
    near(c, "mode-1 state gain", law.K0[1](0, 0), 0.5831, 1e-3);
    return c;
}

Criterion example2_values() {
    Criterion c{3, "Example 2 stationary values", {}};
    const SystemModel s = example2();
    const StationarySolution sol = solve_stationary(s);
    c.check(sol.meta.converged, sol.meta.converged ? "value iteration converged"
                                                   : "value iteration diverged after " +
                                                         std::to_string(sol.meta.iterations) +
                                                         " sweeps; no finite stationary solution");
    auto val = [&](auto get) { return sol.meta.converged ? get() : std::nan(""); };
    near(c, "P_0", val([&] { return sol.P[0](0, 0); }), 5.9311, 1e-3);
    near(c, "P_1", val([&] { return sol.P[1](0, 0); }), 22.9717, 1e-3);
    near(c, "Gamma_0", val([&] { return sol.Gamma(0)(0, 0); }), 6.8077, 1e-3);
    near(c, "Gamma_1", val([&] { return sol.Gamma(1)(0, 0); }), 14.1673, 1e-3);
    near(c, "M0_0", val([&] { return sol.M(0, 0)(0, 0); }), -33.3076, 1e-3);
    near(c, "M0_1", val([&] { return sol.M(0, 1)(0, 0); }), -58.0541, 1e-3);
    near(c, "M1_0", val([&] { return sol.M(1, 0)(0, 0); }), -2.4371, 1e-3);
    near(c, "M1_1", val([&] { return sol.M(1, 1)(0, 0); }), -8.4956, 1e-3);
    near(c, "F1_0", val([&] { return sol.F[0][0](0, 0); }), -9.6267, 1e-3);
    near(c, "F1_1", val([&] { return sol.F[0][1](0, 0); }), -18.7327, 1e-3);
    // a diverged iteration has no certificate; check reports it as not stabilizable
    StabilizabilityCertificate cert;
    cert.verdict = Verdict::NotStabilizable;
    if (sol.meta.converged) cert = certify(sol, s);
    const bool have = cert.margins.size() == 4;
    const double want[4] = {-7.6819, -0.6103, -28.575, -1.7976};
    for (int i = 0; i < 4; ++i)
        near(c, "margin " + std::to_string(i), have ? cert.margins[i].min_eig : std::nan(""), want[i], 2e-3);
    c.check(cert.verdict == Verdict::NotStabilizable, std::string("verdict ") + verdict_name(cert.verdict));
    const int code = cli_exit("check --config " + example_path("example2.json"));
    c.check(code == 2, "check exit code " + std::to_string(code));
    return c;
}

Criterion dynamics() {
    Criterion c{4, "Closed-loop dynamics", {}};
    {
        const SystemModel s = example1();
        const GainLaw law = stationary_gain(solve_stationary(s));
        const double rho = moment_operator(s, law).radius;
        c.check(rho < 1.0, "Example 1 radius " + fmt(rho) + " < 1");
        const TrajectoryStats st = simulate(s, law, 60, 10000, 2024);
        c.check(st.exx[60] < 1e-4 * st.exx[0],
                "Example 1 E[x'x] at step 60 = " + fmt(st.exx[60]) + " < 1e-4 * " + fmt(st.exx[0]));
    }
    {
        const SystemModel s = example2();
        const GainLaw law = receding_gain(solve_stationary(s));
        const double rho = moment_operator(s, law).radius;
        c.check(rho > 1.0, "Example 2 radius " + fmt(rho) + " > 1 (receding gain)");
        const TrajectoryStats st = simulate(s, law, 60, 10000, 2024);
        c.check(st.exx[60] >= 1e3 * st.exx[0],
                "Example 2 E[x'x] at step 60 = " + fmt(st.exx[60]) + " >= 1e3 * " + fmt(st.exx[0]));
    }
    return c;
}

Criterion oracle_equivalence() {
    Criterion c{5, "Augmented-oracle equivalence", {}};
    const auto t0 = Clock::now();
    Rng rng(5);
    const int count = 120;
    double gains = 0.0, h11 = 0.0, h1l = 0.0, literal = 0.0;
    for (int i = 0; i < count; ++i) {
        const SystemModel s = random_model(rng);
        const int N = rng.integer(std::max(s.d, 1), 12);
        const RecursionTables tb = solve_finite(s, N);
        const AugmentedSolution aug = solve_augmented_finite(build_augmented(s), s.chain, s.R, N);
        const CrosscheckReport cc = crosscheck(tb, aug);
        gains = std::max({gains, cc.state_gain, cc.history_gain, cc.gated_gain});
        h11 = std::max(h11, cc.h11_equals_p);
        h1l = std::max(h1l, cc.h1l_equals_s);
        literal = std::max(literal, cc.printed_p_identity);
    }
    const double dt = seconds_since(t0);
    c.check(true, std::to_string(count) + " instances, n <= 3, m <= 2, d <= 3, N <= 12");
    c.check(gains <= 1e-8, "max gain residual " + fmt(gains) + " <= 1e-8");
    c.check(h11 <= 1e-8, "max |H11 - P| residual " + fmt(h11) + " <= 1e-8");
    c.check(h1l <= 1e-8, "max |H1l - S'| residual " + fmt(h1l) + " <= 1e-8");
    c.check(literal <= 1e-8, "max |H11 - H12 Gamma^-1 M0 - P| residual " + fmt(literal) + " <= 1e-8");
    c.check(dt < 30.0, "runtime " + fmt(dt) + " s < 30 s");
    return c;
}

Criterion path_enumeration() {
    Criterion c{6, "Exhaustive path-enumeration cost oracle", {}};
    Rng rng(6);
    Limits lim;
    lim.n_max = 2;
    const int count = 30;
    double cost = 0.0, stat = 0.0;
    for (int i = 0; i < count; ++i) {
        const SystemModel s = random_model(rng, lim);
        const int N = rng.integer(s.d, 8);
        const RecursionTables tb = solve_finite(s, N);
        const double ref = enumerated_cost(s, N, finite_decision(tb));
        cost = std::max(cost, scaled(optimal_cost_finite(tb, s), ref));
        stat = std::max(stat, costate_check(tb, s).stationarity);
    }
    c.check(true, std::to_string(count) + " instances, N <= 8");
    c.check(cost <= 1e-8, "max cost residual " + fmt(cost) + " <= 1e-8");
    c.check(stat <= 1e-9, "max stationarity residual " + fmt(stat) + " <= 1e-9");
    return c;
}

Criterion reductions() {
    Criterion c{7, "Reduction suite", {}};
    Rng rng(7);
    struct Tally {
        int used = 0;
        double worst = 0.0;
    };
    std::map<std::string, Tally> tally;
    int cert_checked = 0, cert_disagree = 0;
    auto absorb = [&](const SystemModel& s) {
        const StationarySolution sol = solve_stationary(s, 1e-12, 50000);
        if (!sol.meta.converged) return;
        for (const Residual& r : reduction_residuals(s, sol).items) {
            if (r.name == "bernoulli_certificate") {
                ++cert_checked;
                cert_disagree += r.value != 0.0;
                continue;
            }
            auto& t = tally[r.name];
            ++t.used;
            t.worst = std::max(t.worst, r.value);
        }
    };
    for (int i = 0; i < 40; ++i) {
        SystemModel s = random_model(rng);
        const double q = rng.uniform(0.05, 0.95);
        s.chain.xi << q, 1.0 - q, q, 1.0 - q;
        absorb(validate_model(s));
    }
    for (int i = 0; i < 40; ++i) {
        Limits lim;
        lim.d_max = 0;
        absorb(random_model(rng, lim));
    }
    for (int i = 0; i < 40; ++i) {
        SystemModel s = random_model(rng);
        s.chain.xi << 0.0, 1.0, 0.0, 1.0;
        s.chain.q0 = 0.0;
        absorb(validate_model(s));
    }
    for (const char* name : {"bernoulli", "delay_free", "lossless"}) {
        const Tally t = tally[name];
        c.check(t.used >= 10 && t.worst <= 1e-8,
                std::string(name) + ": " + std::to_string(t.used) + " instances, max residual " + fmt(t.worst));
    }
    c.check(cert_checked >= 10 && cert_disagree == 0,
            "i.i.d. certificate agreement on " + std::to_string(cert_checked) + " instances, " +
                std::to_string(cert_disagree) + " disagreements");
    return c;
}

Criterion invariants() {
    Criterion c{8, "Invariant suite", {}};
    Rng rng(8);
    double asym = 0.0, min_eig_p = 0.0, identities = 0.0, positivity = 0.0, mono = 0.0;
    int positivity_bad = 0, mono_bad = 0;
    const int count = 150;
    for (int i = 0; i < count; ++i) {
        Limits lim;
        lim.terminal = (i % 2 == 0);
        const SystemModel s = random_model(rng, lim);
        const int N = rng.integer(s.d, s.d + 8);
        const RecursionTables tb = solve_finite(s, N);
        for (const ModeMats& P : tb.P)
            for (int k = 0; k < 3; ++k) {
                const double sc = 1.0 + P[k].cwiseAbs().maxCoeff();
                asym = std::max(asym, (P[k] - P[k].transpose()).cwiseAbs().maxCoeff() / sc);
                min_eig_p = std::min(min_eig_p, detail::eig_range(detail::symmetrized(P[k])).first / sc);
            }
        identities = std::max(identities, expectation_identity_residual(tb, s));
        bool bad = false;
        for (double e : finite_margins(tb)) {
            positivity = std::min(positivity, e);
            bad |= e < -1e-9;
        }
        positivity_bad += bad;

        if (lim.terminal) continue;
        // H = 0: the certificate matrices should not decrease as the horizon grows
        std::vector<Mat> prev = finite_certificate_matrices(solve_finite(s, s.d));
        bool mbad = false;
        for (int n = s.d + 1; n <= s.d + 6; ++n) {
            const std::vector<Mat> cur = finite_certificate_matrices(solve_finite(s, n));
            for (std::size_t a = 0; a < cur.size(); ++a) {
                const double sc = 1.0 + cur[a].cwiseAbs().maxCoeff();
                const double e = detail::eig_range(detail::symmetrized(cur[a] - prev[a])).first / sc;
                mono = std::min(mono, e);
                mbad |= e < -1e-9;
            }
            prev = cur;
        }
        mono_bad += mbad;
    }
    c.check(asym == 0.0 || asym <= 1e-12, "P symmetry at every step, max scaled asymmetry " + fmt(asym));
    c.check(min_eig_p >= -1e-10, "P PSD at every step, min scaled eigenvalue " + fmt(min_eig_p));
    c.check(positivity_bad == 0, "pointwise certificate positivity: " + std::to_string(positivity_bad) + " of " +
                                 std::to_string(count) + " instances negative, min eigenvalue " + fmt(positivity));
    c.check(mono_bad == 0, "certificate monotonicity in N (H = 0): " + std::to_string(mono_bad) +
                               " instances decreasing, min scaled eigenvalue of increment " + fmt(mono));
    c.check(identities <= 1e-10, "conditional-expectation identity residual " + fmt(identities) + " <= 1e-10");

    int steps_bad = 0, steps = 0, mc_models = 0;
    auto compare = [&](const SystemModel& s, const GainLaw& law, int K, int checked, int n_traj) {
        const TrajectoryStats st = simulate(s, law, K, n_traj, 88);
        const ExactMoments ex = exact_moments(s, law, K);
        for (int k = 0; k <= checked; ++k, ++steps)
            steps_bad += std::abs(st.exx[k] - ex.exx[k]) > 4.0 * st.exx_stderr[k] + 1e-12 * (1.0 + ex.exx[k]);
        ++mc_models;
    };
    {
        Rng mc_rng(81);
        for (int i = 0; i < 40 && mc_models < 6; ++i) {
            Limits lim;
            lim.terminal = false;
            const SystemModel s = random_model(mc_rng, lim);
            const StationarySolution sol = solve_stationary(s, 1e-11, 20000);
            if (sol.meta.converged && moment_operator(s, stationary_gain(sol)).radius < 1.0)
                compare(s, stationary_gain(sol), 40, 40, 100000);
        }
        // Example 1 late steps are carried by rare drop bursts, so only early steps are compared;
        // drop-heavy random chains have the same tail, hence the larger sample there
        const SystemModel s = example1();
        const GainLaw law = stationary_gain(solve_stationary(s));
        compare(s, law, 60, 20, 10000);
        const TrajectoryStats a = simulate(s, law, 60, 2000, 99, 1);
        const TrajectoryStats b = simulate(s, law, 60, 2000, 99, 4);
        const TrajectoryStats again = simulate(s, law, 60, 2000, 99, 1);
        c.check(a.exx == b.exx && a.exx_stderr == b.exx_stderr && a.cost_mean == b.cost_mean && a.exx == again.exx,
                "seed determinism bit-exact across runs and thread counts 1 and 4");
    }
    c.check(steps_bad == 0, "Monte Carlo vs exact moments on " + std::to_string(mc_models) +
                                " models: " + std::to_string(steps_bad) + " of " + std::to_string(steps) +
                                " steps outside 4 standard errors");
    return c;
}

}  // namespace

int main() {
    std::vector<Criterion (*)()> runs = {example1_values, example1_certificate, example2_values, dynamics,
                                         oracle_equivalence, path_enumeration, reductions, invariants};
    int failed = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        Criterion c{static_cast<int>(i + 1), "", {}};
        try {
            c = runs[i]();
        } catch (const std::exception& e) {
            c.check(false, std::string("exception: ") + e.what());
        }
        const bool ok = c.passed();
        failed += !ok;
        std::cout << (ok ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.title << "\n";
        for (const auto& [sub_ok, what] : c.subs) std::cout << "    " << (sub_ok ? "pass" : "FAIL") << "  " << what << "\n";
        std::cout.flush();
    }
    std::cout << (8 - failed) << " of 8 criteria passed\n";
    return failed == 0 ? 0 : 1;
}

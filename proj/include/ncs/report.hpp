#pragma once

#include <string>
#include <vector>

#include "ncs/io.hpp"
#include "ncs/simulator.hpp"
#include "ncs/stationary.hpp"
#include "ncs/verify.hpp"

namespace ncs {

inline json error_json(const std::string& code, const std::string& detail) {
    return json{{"spec_version", 1}, {"error", {{"code", code}, {"detail", detail}}}};
}

namespace detail {

inline json mode_row(const StationarySolution& sol, int c) {
    json row;
    row["P"] = to_json(sol.P[c]);
    row["Gamma"] = to_json(sol.Gamma(c));
    json M = json::array(), K = json::array(), S = json::array();
    for (int j = 0; j <= sol.d; ++j) {
        M.push_back(to_json(sol.M(j, c)));
        K.push_back(to_json(sol.block.K[j][c]));
    }
    for (int j = 0; j < sol.d; ++j) S.push_back(to_json(sol.S[j][c]));
    row["M"] = std::move(M);
    row["K"] = std::move(K);
    row["S"] = std::move(S);
    return row;
}

// Window modes listed most recent first: theta_{k-1}, theta_{k-2}, ...
inline json window_modes(int w, int len) {
    json v = json::array();
    for (int i = 0; i < len; ++i) v.push_back((w >> i) & 1);
    return v;
}

inline Mat read_matrix(const json& v, const std::string& name) { return parse_matrix(v, name); }

}  // namespace detail

inline json solve_report(const StationarySolution& sol, const SystemModel& model) {
    json out;
    out["spec_version"] = 1;
    out["command"] = "solve";
    out["n"] = sol.n;
    out["m"] = sol.m;
    out["d"] = sol.d;
    out["converged"] = sol.meta.converged;
    out["iterations"] = sol.meta.iterations;
    out["increment"] = sol.meta.increment;
    out["stationary_residual"] = stationary_residual(model, sol);
    json modes = json::array();
    for (int c = 0; c < 2; ++c) {
        json row = detail::mode_row(sol, c);
        row["mode"] = c;
        modes.push_back(std::move(row));
    }
    out["modes"] = std::move(modes);
    out["initial"] = detail::mode_row(sol, kInit);
    json F = json::array();
    for (int j = 1; j <= sol.d; ++j) {
        const int len = sol.d - j + 1;
        json wins = json::array();
        for (int w = 0; w < (1 << len); ++w)
            wins.push_back({{"window", detail::window_modes(w, len)},
                            {"value", to_json(sol.F[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(w)])}});
        F.push_back({{"j", j}, {"windows", std::move(wins)}});
    }
    out["F"] = std::move(F);
    return out;
}

// Rebuilds the stationary fields from a solve report.
inline StationarySolution solution_from_report(const json& rep) {
    StationarySolution sol;
    sol.n = rep.at("n").get<int>();
    sol.m = rep.at("m").get<int>();
    sol.d = rep.at("d").get<int>();
    sol.meta.converged = rep.at("converged").get<bool>();
    sol.meta.iterations = rep.at("iterations").get<int>();
    const int d = sol.d;
    sol.block.M.resize(static_cast<std::size_t>(d + 1));
    sol.block.K.resize(static_cast<std::size_t>(d + 1));
    sol.S.resize(static_cast<std::size_t>(d));
    for (int c = 0; c < 3; ++c) {
        const json& row = c == kInit ? rep.at("initial") : rep.at("modes").at(static_cast<std::size_t>(c));
        sol.P[c] = detail::read_matrix(row.at("P"), "P");
        sol.block.Gamma[c] = detail::read_matrix(row.at("Gamma"), "Gamma");
        for (int j = 0; j <= d; ++j) {
            sol.block.M[j][c] = detail::read_matrix(row.at("M").at(static_cast<std::size_t>(j)), "M");
            sol.block.K[j][c] = detail::read_matrix(row.at("K").at(static_cast<std::size_t>(j)), "K");
        }
        for (int j = 0; j < d; ++j) sol.S[j][c] = detail::read_matrix(row.at("S").at(static_cast<std::size_t>(j)), "S");
    }
    for (const json& fj : rep.at("F")) {
        std::vector<Mat> wins;
        for (const json& w : fj.at("windows")) wins.push_back(detail::read_matrix(w.at("value"), "F"));
        sol.F.push_back(std::move(wins));
    }
    return sol;
}

inline json gains_json(const GainLaw& law) {
    json rows = json::array();
    for (int c = 0; c < 3; ++c) {
        json Kj = json::array();
        for (const Mat& K : law.Kj[c]) Kj.push_back(to_json(K));
        rows.push_back({{"mode", c == kInit ? json("initial") : json(c)}, {"K0", to_json(law.K0[c])}, {"Kj", std::move(Kj)}});
    }
    return rows;
}

inline json check_report(const StationarySolution& sol, const StabilizabilityCertificate& cert) {
    json out;
    out["spec_version"] = 1;
    out["command"] = "check";
    out["verdict"] = verdict_name(cert.verdict);
    out["observability_ok"] = cert.observability_ok;
    out["iterations"] = sol.meta.iterations;
    json margins = json::array();
    for (const Margin& mg : cert.margins) {
        // modes = (m_{-1}, m_0, ..., m_{d-1}); P is taken at m_{d-1}, Gamma at m_{s-1}
        json item;
        item["modes"] = mg.modes;
        item["P_mode"] = mg.modes.back();
        json gm = json::array();
        for (int s = 0; s < sol.d; ++s) gm.push_back(mg.modes[static_cast<std::size_t>(s)]);
        item["Gamma_modes"] = std::move(gm);
        item["min_eig"] = mg.min_eig;
        margins.push_back(std::move(item));
    }
    out["margins"] = std::move(margins);
    out["gains"] = gains_json(stationary_gain(sol));
    return out;
}

inline json diverged_check_report(const StationarySolution& sol) {
    json out;
    out["spec_version"] = 1;
    out["command"] = "check";
    out["verdict"] = verdict_name(Verdict::NotStabilizable);
    out["observability_ok"] = true;
    out["iterations"] = sol.meta.iterations;
    out["reason"] = "value iteration diverged";
    out["margins"] = json::array();
    return out;
}

inline json verify_json(const VerifyReport& rep, double tol) {
    json out;
    out["spec_version"] = 1;
    out["command"] = "verify";
    out["horizon"] = rep.horizon;
    out["costate_horizon"] = rep.costate_horizon;
    out["tolerance"] = tol;
    json g = json::object(), info = json::object();
    for (const auto& r : rep.gated) g[r.name] = r.value;
    for (const auto& r : rep.informational) info[r.name] = r.value;
    out["residuals"] = std::move(g);
    out["informational"] = std::move(info);
    out["skipped"] = rep.skipped;
    out["pass"] = rep.worst() <= tol;
    return out;
}

inline std::string exx_csv(const TrajectoryStats& st) {
    std::string s = "step,exx,exx_stderr\n";
    for (int k = 0; k <= st.steps; ++k) {
        const auto num = [](double v) { return std::isfinite(v) ? format_number(v) : std::string(v > 0 ? "inf" : "nan"); };
        s += std::to_string(k) + "," + num(st.exx[static_cast<std::size_t>(k)]) + "," +
             num(st.exx_stderr[static_cast<std::size_t>(k)]) + "\n";
    }
    return s;
}

}  // namespace ncs

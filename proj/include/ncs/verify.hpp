#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "ncs/augmented.hpp"
#include "ncs/reductions.hpp"
#include "ncs/stationary.hpp"

namespace ncs {

struct Residual {
    std::string name;
    double value = 0.0;
};

// Gated residuals must stay below the tolerance; informational ones are reported only.
struct VerifyReport {
    int horizon = 0;
    int costate_horizon = -1;  // -1 when the model is too large for enumeration
    std::vector<Residual> gated;
    std::vector<Residual> informational;
    std::vector<std::string> skipped;

    double worst() const {
        double e = 0.0;
        for (const auto& r : gated) e = std::max(e, std::isfinite(r.value) ? r.value : 1e300);
        return e;
    }
};

struct ReductionResiduals {
    std::vector<Residual> items;
    std::vector<std::string> skipped;
};

namespace detail {

inline bool iid_chain(const Mat2& xi) { return (xi.row(0) - xi.row(1)).cwiseAbs().maxCoeff() <= 1e-12; }

inline bool lossless_chain(const Mat2& xi) { return xi(0, 1) >= 1.0 - 1e-12 && xi(1, 1) >= 1.0 - 1e-12; }

inline double cert_disagreement(bool a, bool b) { return a == b ? 0.0 : 1.0; }

inline bool margins_positive(const StabilizabilityCertificate& c) {
    return std::all_of(c.margins.begin(), c.margins.end(), [](const Margin& m) { return m.min_eig > kEpsPd; });
}

}  // namespace detail

// Compares the general stationary solution with every reduction that applies to the model.
inline ReductionResiduals reduction_residuals(const SystemModel& model, const StationarySolution& sol) {
    ReductionResiduals out;
    const int d = model.d;
    const Mat2& xi = model.chain.xi;
    if (!sol.meta.converged) {
        out.skipped.push_back("reductions: general value iteration did not converge");
        return out;
    }
    const StabilizabilityCertificate cert = certify(sol, model);
    if (detail::iid_chain(xi)) {
        const BernoulliSolution b = solve_bernoulli(model);
        if (!b.meta.converged) {
            out.skipped.push_back("bernoulli: reduction did not converge");
        } else {
            double e = 0.0;
            for (int c = 0; c < 2; ++c) {
                e = std::max(e, detail::scaled_diff(b.Pj[0], sol.P[c]));
                e = std::max(e, detail::scaled_diff(b.Gamma, sol.Gamma(c)));
                e = std::max(e, detail::scaled_diff(b.M0, sol.M(0, c)));
                e = std::max(e, detail::scaled_diff(b.K0, sol.block.K[0][c]));
                for (int j = 1; j <= d; ++j) {
                    e = std::max(e, detail::scaled_diff(b.Mj[j - 1], sol.M(j, c)));
                    e = std::max(e, detail::scaled_diff(b.Kj[j - 1], sol.block.K[j][c]));
                }
            }
            out.items.push_back({"bernoulli", e});
            out.items.push_back({"bernoulli_certificate",
                                 detail::cert_disagreement(b.certificate_min_eig > kEpsPd, detail::margins_positive(cert))});
        }
    }
    if (d == 0) {
        const DelayFreeSolution f = solve_delay_free(model);
        if (!f.meta.converged) {
            out.skipped.push_back("delay_free: reduction did not converge");
        } else {
            double e = 0.0;
            for (int c = 0; c < 2; ++c) {
                e = std::max(e, detail::scaled_diff(f.P[c], sol.P[c]));
                e = std::max(e, detail::scaled_diff(f.Gamma[c], sol.Gamma(c)));
                e = std::max(e, detail::scaled_diff(f.M0[c], sol.M(0, c)));
                e = std::max(e, detail::scaled_diff(f.K0[c], sol.block.K[0][c]));
                e = std::max(e, std::abs(f.margins[c] - cert.margins[c].min_eig) / (1.0 + std::abs(f.margins[c])));
            }
            out.items.push_back({"delay_free", e});
        }
    }
    if (detail::lossless_chain(xi)) {
        const LosslessSolution l = solve_lossless(model);
        if (!l.meta.converged) {
            out.skipped.push_back("lossless: reduction did not converge");
        } else {
            double e = std::max({detail::scaled_diff(l.P, sol.P[1]), detail::scaled_diff(l.Gamma, sol.Gamma(1)),
                                 detail::scaled_diff(l.M0, sol.M(0, 1)), detail::scaled_diff(l.K0, sol.block.K[0][1])});
            for (int j = 1; j <= d; ++j) {
                e = std::max(e, detail::scaled_diff(l.Mj[j - 1], sol.M(j, 1)));
                e = std::max(e, detail::scaled_diff(l.Kj[j - 1], sol.block.K[j][1]));
            }
            // the all-delivered window carries every bit set
            for (int s = 0; s < d; ++s)
                e = std::max(e, detail::scaled_diff(l.F[s], sol.F[s][static_cast<std::size_t>((1 << (d - s)) - 1)]));
            out.items.push_back({"lossless", e});
        }
    }
    return out;
}

inline VerifyReport run_verify(const SystemModel& model, int N, double tol = 1e-11, int max_iter = 200000) {
    VerifyReport rep;
    rep.horizon = N;
    const RecursionTables tb = solve_finite(model, N);
    const AugmentedSolution aug = solve_augmented_finite(build_augmented(model), model.chain, model.R, N);
    const CrosscheckReport cc = crosscheck(tb, aug);
    rep.gated.push_back({"state_gain", cc.state_gain});
    rep.gated.push_back({"history_gain", cc.history_gain});
    rep.gated.push_back({"gated_gain", cc.gated_gain});
    rep.gated.push_back({"h11_equals_p", cc.h11_equals_p});
    rep.gated.push_back({"h1l_equals_s", cc.h1l_equals_s});
    const double jf = optimal_cost_finite(tb, model), ja = augmented_cost(aug, model);
    rep.gated.push_back({"optimal_cost", std::abs(jf - ja) / (1.0 + std::abs(ja))});
    rep.gated.push_back({"expectation_identities", expectation_identity_residual(tb, model)});
    rep.informational.push_back({"h11_minus_h12_gain_equals_p", cc.printed_p_identity});

    if (model.n() <= 2 && model.m() <= 2 && model.d <= 3) {
        rep.costate_horizon = std::max(model.d, std::min(N, 8));
        const CostateReport cs = costate_check(solve_finite(model, rep.costate_horizon), model);
        const double scale = 1.0 + model.init.x0.cwiseAbs().maxCoeff();
        rep.gated.push_back({"costate_stationarity", cs.stationarity / scale});
        rep.gated.push_back({"costate_formula", cs.costate / scale});
    } else {
        rep.skipped.push_back("costate: model too large for path enumeration");
    }

    const StationarySolution sol = solve_stationary(model, tol, max_iter);
    if (sol.meta.converged) rep.gated.push_back({"stationary_equations", stationary_residual(model, sol)});
    const ReductionResiduals red = reduction_residuals(model, sol);
    rep.gated.insert(rep.gated.end(), red.items.begin(), red.items.end());
    rep.skipped.insert(rep.skipped.end(), red.skipped.begin(), red.skipped.end());
    return rep;
}

}  // namespace ncs

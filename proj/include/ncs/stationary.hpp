#pragma once

#include <algorithm>
#include <deque>
#include <optional>
#include <vector>

#include "ncs/augmented.hpp"
#include "ncs/finite_horizon.hpp"

namespace ncs {

struct StationaryMeta {
    int iterations = 0;
    double increment = 0.0;
    bool converged = false;
    bool diverged = false;
};

// Fixed point of the backward sweep. Row kInit holds the limit of the label-0 quantities
// conditioned on the law of theta_0; it fixes the very first decision u(0).
struct StationarySolution {
    int n = 0, m = 0, d = 0;
    ModeMats P;
    LabelBlock block;                   // Gamma, M^0..M^d, K^0..K^d
    std::vector<ModeMats> S;            // (S^j)', j = 1..d
    std::vector<std::vector<Mat>> F;    // F^j per window, as in RecursionTables
    StationaryMeta meta;

    const Mat& Gamma(int c) const { return block.Gamma[c]; }
    const Mat& M(int j, int c) const { return block.M[j][c]; }
};

namespace detail {

inline double max_abs(const Mat& X) { return X.size() ? X.cwiseAbs().maxCoeff() : 0.0; }

inline double block_diff(const LabelBlock& a, const LabelBlock& b) {
    double e = 0.0;
    for (int c = 0; c < 3; ++c) {
        e = std::max(e, max_abs(a.Gamma[c] - b.Gamma[c]));
        for (std::size_t j = 0; j < a.M.size(); ++j) e = std::max(e, max_abs(a.M[j][c] - b.M[j][c]));
    }
    return e;
}

inline double block_scale(const LabelBlock& a) {
    double e = 0.0;
    for (int c = 0; c < 3; ++c) {
        e = std::max(e, max_abs(a.Gamma[c]));
        for (const auto& mj : a.M) e = std::max(e, max_abs(mj[c]));
    }
    return e;
}

}  // namespace detail

// Value iteration: the finite sweep with H = 0, extended until the sup increment of every
// field is at most tol * (1 + field scale). Fields above 1e12 mark divergence.
inline StationarySolution solve_stationary(const SystemModel& model, double tol = 1e-11, int max_iter = 200000) {
    const SweepContext cx(model);
    const int n = cx.n, m = cx.m, d = cx.d;
    StationarySolution sol;
    sol.n = n;
    sol.m = m;
    sol.d = d;

    const LabelBlock pad = terminal_block(n, m, d, model.R);
    std::deque<LabelBlock> hist(static_cast<std::size_t>(d), pad);  // hist[i] is label t+1+i
    LabelBlock newest = pad;
    ModeMats Pn = {Mat::Zero(n, n), Mat::Zero(n, n), Mat::Zero(n, n)};
    std::vector<ModeMats> Sn;
    std::vector<const LabelBlock*> later(static_cast<std::size_t>(d));

    double last_scale = 0.0;
    for (int it = 1; it <= max_iter; ++it) {
        for (int i = 0; i < d; ++i) later[i] = &hist[static_cast<std::size_t>(i)];
        LabelBlock blk;
        ModeMats P;
        std::vector<ModeMats> S;
        try {
            blk = form_block(cx, Pn, later, -it);
            const LabelBlock& atk = d == 0 ? blk : hist[static_cast<std::size_t>(d - 1)];
            P = form_p(cx, Pn, atk);
            S = form_s(cx, Pn, Sn, atk);
        } catch (const Error& e) {
            if (!detail::blowing_up(e, last_scale)) throw;
            sol.meta.diverged = true;
            break;
        }

        double inc = detail::block_diff(blk, newest);
        double scale = detail::block_scale(blk);
        bool finite = true;
        for (int c = 0; c < 3; ++c) {
            inc = std::max(inc, detail::max_abs(P[c] - Pn[c]));
            scale = std::max(scale, detail::max_abs(P[c]));
            finite = finite && P[c].allFinite();
            for (int j = 0; j < d; ++j) {
                const Mat prev = Sn.empty() ? Mat::Zero(n, m) : Sn[j][c];
                inc = std::max(inc, detail::max_abs(S[j][c] - prev));
                scale = std::max(scale, detail::max_abs(S[j][c]));
            }
        }
        if (d > 0) {
            hist.push_front(blk);
            hist.pop_back();
        }
        newest = std::move(blk);
        Pn = std::move(P);
        Sn = std::move(S);
        sol.meta.iterations = it;
        sol.meta.increment = inc;
        last_scale = scale;
        if (!finite || !(scale <= 1e12)) {
            sol.meta.diverged = true;
            break;
        }
        if (it > d + 1 && inc <= tol * (1.0 + scale)) {
            sol.meta.converged = true;
            break;
        }
    }
    sol.P = Pn;
    sol.block = newest;
    sol.S = Sn.empty() ? std::vector<ModeMats>(static_cast<std::size_t>(d)) : Sn;
    if (sol.meta.converged) sol.F = form_f(cx, sol.S, [&](int) -> const LabelBlock& { return sol.block; });
    return sol;
}

// Largest scaled residual of the stationary equations (P, Gamma, M^j, S^j) at the solution.
inline double stationary_residual(const SystemModel& model, const StationarySolution& sol) {
    const SweepContext cx(model);
    const int d = cx.d;
    std::vector<const LabelBlock*> later(static_cast<std::size_t>(d), &sol.block);
    const LabelBlock blk = form_block(cx, sol.P, later, 0);
    const ModeMats P = form_p(cx, sol.P, sol.block);
    const auto S = form_s(cx, sol.P, sol.S, sol.block);
    double e = 0.0;
    for (int c = 0; c < 3; ++c) {
        e = std::max(e, detail::scaled_diff(P[c], sol.P[c]));
        e = std::max(e, detail::scaled_diff(blk.Gamma[c], sol.block.Gamma[c]));
        for (int j = 0; j <= d; ++j) e = std::max(e, detail::scaled_diff(blk.M[j][c], sol.block.M[j][c]));
        for (int j = 0; j < d; ++j) e = std::max(e, detail::scaled_diff(S[j][c], sol.S[j][c]));
    }
    return e;
}

enum class Verdict { Stabilizable, NotStabilizable, Withheld };

inline const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::Stabilizable: return "stabilizable";
        case Verdict::NotStabilizable: return "not_stabilizable";
        default: return "withheld";
    }
}

struct Margin {
    std::vector<int> modes;  // (m_{-1}, m_0, ..., m_{d-1}); for d = 0 just (m)
    double min_eig = 0.0;
};

struct StabilizabilityCertificate {
    std::vector<Margin> margins;
    bool observability_ok = false;
    Verdict verdict = Verdict::Withheld;
};

// P_{m_{d-1}} - sum_s (F^{s+1})' Gamma_{m_{s-1}}^{-1} F^{s+1}, F^{s+1} on the window m_s..m_{d-1}.
inline StabilizabilityCertificate certify(const StationarySolution& sol, const SystemModel& model) {
    if (!sol.meta.converged) throw Error("NotConverged", "stationary iteration did not converge");
    const int d = sol.d;
    StabilizabilityCertificate cert;
    cert.observability_ok = exact_observability(model.A, model.Q);
    bool all_pos = true;
    if (d == 0) {
        for (int c = 0; c < 2; ++c) {
            Margin mg{{c}, detail::eig_range(sol.P[c]).first};
            all_pos = all_pos && mg.min_eig > kEpsPd;
            cert.margins.push_back(mg);
        }
    } else {
        for (int code = 0; code < (1 << (d + 1)); ++code) {
            std::vector<int> a(static_cast<std::size_t>(d + 1));  // a[0] = m_{-1}, a[i+1] = m_i
            for (int i = 0; i <= d; ++i) a[i] = (code >> (d - i)) & 1;
            auto mode = [&](int i) { return a[static_cast<std::size_t>(i + 1)]; };
            Mat X = sol.P[mode(d - 1)];
            for (int s = 0; s < d; ++s) {
                int w = 0;
                for (int i = 1; i <= d - s; ++i) w |= mode(d - i) << (i - 1);
                const Mat& F = sol.F[s][w];
                X -= F.transpose() * sol.block.Gamma[mode(s - 1)].llt().solve(F);
            }
            Margin mg{a, detail::eig_range(detail::symmetrized(X)).first};
            all_pos = all_pos && mg.min_eig > kEpsPd;
            cert.margins.push_back(std::move(mg));
        }
    }
    if (!cert.observability_ok)
        cert.verdict = Verdict::Withheld;
    else
        cert.verdict = all_pos ? Verdict::Stabilizable : Verdict::NotStabilizable;
    return cert;
}

// u(k-d) = -K0[c] x(k-d) - sum_j Kj[c][j-1] u(k-2d+j-1) with c = theta_{k-d-1}; c = kInit for u(0).
struct GainLaw {
    int n = 0, m = 0, d = 0;
    ModeMats K0;
    std::array<std::vector<Mat>, 3> Kj;

    // Gain on z = [x; u(k-1); ...; u(k-d)]; the column of u(k-l) carries K^{d-l+1}.
    Mat row(int c) const {
        Mat K(m, n + d * m);
        K.leftCols(n) = K0[c];
        for (int l = 1; l <= d; ++l) K.middleCols(n + (l - 1) * m, m) = Kj[c][static_cast<std::size_t>(d - l)];
        return K;
    }
};

inline GainLaw gain_from_block(int n, int m, int d, const LabelBlock& block) {
    GainLaw g;
    g.n = n;
    g.m = m;
    g.d = d;
    for (int c = 0; c < 3; ++c) {
        g.K0[c] = block.K[0][c];
        for (int j = 1; j <= d; ++j) g.Kj[c].push_back(block.K[j][c]);
    }
    return g;
}

inline GainLaw stationary_gain(const StationarySolution& sol) {
    if (!sol.meta.converged) throw Error("NotConverged", "stationary iteration did not converge");
    return gain_from_block(sol.n, sol.m, sol.d, sol.block);
}

// Gain of the last completed sweep step; equals the stationary gain once converged.
inline GainLaw receding_gain(const StationarySolution& sol) { return gain_from_block(sol.n, sol.m, sol.d, sol.block); }

// V_j(k+1) = sum_i xi(i,j) Phi[i][j] V_i(k) Phi[i][j]', V_i(k) = E[z(k) z(k)' 1{theta_{k-1} = i}].
// Phi[c][j] = Atil_j - Btil_j Kbar_c; row kInit drives the first step.
struct MomentOperator {
    int D = 0;
    std::array<std::array<Mat, 2>, 3> Phi;
    Mat T;  // acts on [vec V_0; vec V_1]
    double radius = 0.0;
};

inline MomentOperator moment_operator(const SystemModel& model, const GainLaw& law) {
    if (law.n != model.n() || law.m != model.m() || law.d != model.d)
        throw Error("DimensionMismatch", "gain law does not match the model");
    const AugmentedModel g = build_augmented(model);
    MomentOperator op;
    op.D = g.D;
    const int D2 = g.D * g.D;
    for (int c = 0; c < 3; ++c) {
        const Mat K = law.row(c);
        for (int j = 0; j < 2; ++j) op.Phi[c][j] = g.Atil[j] - g.Bmode[j] * K;
    }
    op.T = Mat::Zero(2 * D2, 2 * D2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const Mat& P = op.Phi[i][j];
            Mat kr(D2, D2);
            for (int a = 0; a < g.D; ++a)
                for (int b = 0; b < g.D; ++b) kr.block(a * g.D, b * g.D, g.D, g.D) = P(a, b) * P;
            op.T.block(j * D2, i * D2, D2, D2) = model.chain.xi(i, j) * kr;
        }
    op.radius = op.T.size() ? Eigen::EigenSolver<Mat>(op.T, false).eigenvalues().cwiseAbs().maxCoeff() : 0.0;
    return op;
}

using MomentPair = std::array<Mat, 2>;

inline MomentPair first_moments(const MomentOperator& op, const SystemModel& model, const Vec& z0) {
    const Row2 r0(model.chain.q0, 1.0 - model.chain.q0);
    const Mat Z = z0 * z0.transpose();
    MomentPair V;
    for (int j = 0; j < 2; ++j) V[j] = r0(j) * op.Phi[kInit][j] * Z * op.Phi[kInit][j].transpose();
    return V;
}

inline MomentPair step_moments(const MomentOperator& op, const SystemModel& model, const MomentPair& V) {
    MomentPair out;
    for (int j = 0; j < 2; ++j) {
        out[j] = Mat::Zero(op.D, op.D);
        for (int i = 0; i < 2; ++i)
            out[j] += model.chain.xi(i, j) * op.Phi[i][j] * V[i] * op.Phi[i][j].transpose();
    }
    return out;
}

struct InfiniteCost {
    double moment_sum = 0.0;
    int terms = 0;
    std::optional<double> closed_form;
};

// Stage weight on z under the law: x'Qx + u'Ru with u = -Kbar_c z.
inline Mat stage_weight(const SystemModel& model, const GainLaw& law, int c) {
    const int n = model.n(), D = n + model.d * model.m();
    Mat C = Mat::Zero(D, D);
    C.topLeftCorner(n, n) = model.Q;
    const Mat K = law.row(c);
    return C + K.transpose() * model.R * K;
}

inline InfiniteCost infinite_cost(const StationarySolution& sol, const SystemModel& model) {
    const StabilizabilityCertificate cert = certify(sol, model);
    if (cert.verdict != Verdict::Stabilizable) throw Error("NotStabilized", "certificate is not positive");
    const GainLaw law = stationary_gain(sol);
    const MomentOperator op = moment_operator(model, law);
    if (!(op.radius < 1.0)) throw Error("NotStabilized", "closed-loop moment operator radius >= 1");
    const std::array<Mat, 2> C = {stage_weight(model, law, 0), stage_weight(model, law, 1)};
    const Vec z0 = stack_initial(model);
    InfiniteCost out;
    double J = z0.dot(stage_weight(model, law, kInit) * z0);
    MomentPair V = first_moments(op, model, z0);
    for (int k = 1; k < 10000000; ++k) {
        const double inc = (C[0].cwiseProduct(V[0])).sum() + (C[1].cwiseProduct(V[1])).sum();
        J += inc;
        out.terms = k;
        if (inc <= 1e-12 * std::max(1.0, J)) break;
        V = step_moments(op, model, V);
    }
    out.moment_sum = J;
    out.closed_form = detail::optimal_cost_from(
        model, [&](int c) -> const Mat& { return sol.P[c]; },
        [&](int j, int w) -> const Mat& { return sol.F[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(w)]; },
        [&](int, int c) -> const Mat& { return sol.block.Gamma[c]; });
    return out;
}

}  // namespace ncs

#pragma once

#include <algorithm>
#include <vector>

#include "ncs/finite_horizon.hpp"

namespace ncs {

// Delay-free jump system on z = [x; u(k-1); ...; u(k-d)]. For d = 0, z = x and the
// channel gates the input directly, so Bmode differs between modes.
struct AugmentedModel {
    int n = 0, m = 0, d = 0, D = 0;
    std::array<Mat, 2> Atil;
    std::array<Mat, 2> Bmode;
    Mat Qtil, Htil;

    const Mat& Btil() const { return Bmode[1]; }
};

inline AugmentedModel build_augmented(const SystemModel& model) {
    AugmentedModel g;
    g.n = model.n();
    g.m = model.m();
    g.d = model.d;
    g.D = g.n + g.d * g.m;
    const int n = g.n, m = g.m, d = g.d, D = g.D;
    for (int th = 0; th < 2; ++th) {
        Mat At = Mat::Zero(D, D);
        At.topLeftCorner(n, n) = model.A;
        if (d > 0) {
            At.block(0, n + (d - 1) * m, n, m) = static_cast<double>(th) * model.B;
            for (int i = 1; i < d; ++i) At.block(n + i * m, n + (i - 1) * m, m, m).setIdentity();
        }
        g.Atil[th] = At;
        Mat Bt = Mat::Zero(D, m);
        if (d > 0)
            Bt.block(n, 0, m, m).setIdentity();
        else
            Bt = static_cast<double>(th) * model.B;
        g.Bmode[th] = Bt;
    }
    g.Qtil = Mat::Zero(D, D);
    g.Qtil.topLeftCorner(n, n) = model.Q;
    g.Htil = Mat::Zero(D, D);
    g.Htil.topLeftCorner(n, n) = model.H;
    return g;
}

// H[k][c] is the cost-to-go matrix of z(k) given theta_{k-1} = c (row kInit at k = 0).
// gain[k][c] = Lambda^{-1} Mtil gives u(k) = -gain z(k).
struct AugmentedSolution {
    int N = 0;
    std::vector<ModeMats> H;       // k = 0 .. N+1
    std::vector<ModeMats> Lambda;  // k = 0 .. N
    std::vector<ModeMats> Mtil;
    std::vector<ModeMats> gain;
};

inline AugmentedSolution solve_augmented_finite(const AugmentedModel& g, const MarkovChannel& ch, const Mat& R, int N) {
    if (N < 1) throw Error("BadHorizon", "augmented horizon must be >= 1");
    const std::array<Row2, 3> rows = {Row2(ch.xi.row(0)), Row2(ch.xi.row(1)), Row2(ch.q0, 1.0 - ch.q0)};
    AugmentedSolution sol;
    sol.N = N;
    sol.H.resize(static_cast<std::size_t>(N + 2));
    sol.Lambda.resize(static_cast<std::size_t>(N + 1));
    sol.Mtil.resize(static_cast<std::size_t>(N + 1));
    sol.gain.resize(static_cast<std::size_t>(N + 1));
    sol.H[N + 1] = {g.Htil, g.Htil, g.Htil};
    for (int k = N; k >= 0; --k) {
        const ModeMats& Hn = sol.H[k + 1];
        std::array<Mat, 2> BtH, AtHA;
        for (int j = 0; j < 2; ++j) {
            BtH[j] = g.Bmode[j].transpose() * Hn[j];
            AtHA[j] = g.Atil[j].transpose() * Hn[j] * g.Atil[j];
        }
        for (int c = 0; c < 3; ++c) {
            const Row2& r = rows[c];
            Mat L = R;
            Mat Mt = Mat::Zero(g.m, g.D);
            Mat Hc = g.Qtil;
            for (int j = 0; j < 2; ++j) {
                L += r(j) * BtH[j] * g.Bmode[j];
                Mt += r(j) * BtH[j] * g.Atil[j];
                Hc += r(j) * AtHA[j];
            }
            L = detail::symmetrized(L);
            if (!detail::is_pd(L)) throw Error("SingularLambda", "step " + std::to_string(k));
            Mat K = L.llt().solve(Mt);
            Hc -= Mt.transpose() * K;
            sol.H[k][c] = detail::symmetrized(Hc);
            sol.Lambda[k][c] = L;
            sol.Mtil[k][c] = Mt;
            sol.gain[k][c] = K;
        }
    }
    return sol;
}

inline Vec stack_initial(const SystemModel& model) {
    const int n = model.n(), m = model.m(), d = model.d;
    Vec z(n + d * m);
    z.head(n) = model.init.x0;
    for (int l = 1; l <= d; ++l) z.segment(n + (l - 1) * m, m) = model.init.u_pre[static_cast<std::size_t>(l - 1)];
    return z;
}

// Optimal cost z(0)' H_init(0) z(0).
inline double augmented_cost(const AugmentedSolution& sol, const SystemModel& model) {
    const Vec z = stack_initial(model);
    return z.dot(sol.H[0][kInit] * z);
}

// Differences are scaled by 1 + max|reference| so that residuals compare across magnitudes.
struct CrosscheckReport {
    double state_gain = 0.0;       // x-column of the augmented gain vs Gamma^{-1} M^0
    double history_gain = 0.0;     // u(k-l) columns, l < d, vs Gamma^{-1} M^{d-l+1}
    double gated_gain = 0.0;       // u(k-d) column vs Gamma^{-1} M^1
    double h11_equals_p = 0.0;     // H^{1,1} vs P
    double h1l_equals_s = 0.0;     // H^{1,l+1} vs (S^{d-l+1})'
    double printed_p_identity = 0.0;  // H^{1,1} - H^{1,2} Gamma^{-1} M^0 vs P
};

namespace detail {

inline double scaled_diff(const Mat& a, const Mat& ref) {
    if (a.size() == 0) return 0.0;
    return (a - ref).cwiseAbs().maxCoeff() / (1.0 + ref.cwiseAbs().maxCoeff());
}

}  // namespace detail

inline CrosscheckReport crosscheck(const RecursionTables& fin, const AugmentedSolution& aug) {
    if (fin.N != aug.N) throw Error("HorizonMismatch", "finite and augmented horizons differ");
    const int n = fin.n, m = fin.m, d = fin.d;
    CrosscheckReport rep;
    for (int t = 0; t <= fin.N - d; ++t) {
        for (int c = 0; c < 3; ++c) {
            if (c == kInit && t != 0) continue;
            const LabelBlock& b = fin.block(t);
            const Mat& Kz = aug.gain[t][c];
            rep.state_gain = std::max(rep.state_gain, detail::scaled_diff(Kz.leftCols(n), b.K[0][c]));
            for (int l = 1; l <= d; ++l) {
                const double e = detail::scaled_diff(Kz.middleCols(n + (l - 1) * m, m), b.K[d - l + 1][c]);
                if (l < d)
                    rep.history_gain = std::max(rep.history_gain, e);
                else
                    rep.gated_gain = std::max(rep.gated_gain, e);
            }
        }
    }
    for (int k = d; k <= fin.N; ++k) {
        for (int c = 0; c < 2; ++c) {
            const Mat& Hk = aug.H[k][c];
            rep.h11_equals_p = std::max(rep.h11_equals_p, detail::scaled_diff(Hk.topLeftCorner(n, n), fin.P_at(k, c)));
            for (int l = 1; l <= d; ++l)
                rep.h1l_equals_s = std::max(
                    rep.h1l_equals_s, detail::scaled_diff(Hk.block(0, n + (l - 1) * m, n, m), fin.S_at(d - l + 1, k, c)));
            if (d > 0) {
                const Mat lhs = Hk.topLeftCorner(n, n) - Hk.block(0, n, n, m) * fin.block(k).K[0][c];
                rep.printed_p_identity = std::max(rep.printed_p_identity, detail::scaled_diff(lhs, fin.P_at(k, c)));
            }
        }
    }
    return rep;
}

}  // namespace ncs

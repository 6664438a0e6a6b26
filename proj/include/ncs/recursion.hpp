#pragma once

#include <array>
#include <vector>

#include "ncs/chain.hpp"
#include "ncs/model.hpp"

namespace ncs {

// Conditioning rows: 0 and 1 are channel modes, kInit conditions on the law of theta_0.
inline constexpr int kInit = 2;
using ModeMats = std::array<Mat, 3>;

struct ChainWeights {
    Mat2 xi;
    std::array<Row2, 3> rows;
    std::vector<Mat2> pw;  // xi^0 .. xi^(d+1)

    ChainWeights(const MarkovChannel& ch, int d) : xi(ch.xi) {
        rows = {Row2(ch.xi.row(0)), Row2(ch.xi.row(1)), Row2(ch.q0, 1.0 - ch.q0)};
        pw.resize(static_cast<std::size_t>(d) + 2);
        pw[0] = Mat2::Identity();
        for (std::size_t s = 1; s < pw.size(); ++s) pw[s] = pw[s - 1] * xi;
    }
    // Law of theta_{tau+s} given row c describes theta_{tau+1}.
    Row2 marg(int c, int s) const { return rows[static_cast<std::size_t>(c)] * pw[static_cast<std::size_t>(s - 1)]; }
    // Joint law of (theta_{tau+s}, theta_{tau+t}), 1 <= s <= t.
    Mat2 law(int c, int s, int t) const {
        return marg(c, s).transpose().asDiagonal() * pw[static_cast<std::size_t>(t - s)];
    }
};

// Gamma and M^0..M^d sharing a decision label, plus K^j = Gamma^{-1} M^j.
struct LabelBlock {
    ModeMats Gamma;
    std::vector<ModeMats> M;
    std::vector<ModeMats> K;
};

inline LabelBlock terminal_block(int n, int m, int d, const Mat& R) {
    LabelBlock b;
    b.M.resize(static_cast<std::size_t>(d) + 1);
    b.K.resize(static_cast<std::size_t>(d) + 1);
    for (int c = 0; c < 3; ++c) {
        b.Gamma[c] = R;
        for (int j = 0; j <= d; ++j) {
            b.M[j][c] = Mat::Zero(m, j == 0 ? n : m);
            b.K[j][c] = b.M[j][c];
        }
    }
    return b;
}

struct SweepContext {
    const SystemModel& model;
    ChainWeights w;
    int n, m, d;
    std::vector<Mat> Apow;  // A^0 .. A^(d+1)

    explicit SweepContext(const SystemModel& mdl)
        : model(mdl), w(mdl.chain, mdl.d), n(mdl.n()), m(mdl.m()), d(mdl.d) {
        Apow.resize(static_cast<std::size_t>(d) + 2);
        Apow[0] = Mat::Identity(n, n);
        for (std::size_t i = 1; i < Apow.size(); ++i) Apow[i] = Apow[i - 1] * mdl.A;
    }
};

namespace detail {

// A relative-singularity failure on an iterate that is already large signals divergence.
inline constexpr double kBlowUpScale = 1e6;

inline bool blowing_up(const Error& e, double scale) {
    return (e.code() == "SingularGamma") && !(scale <= kBlowUpScale);
}

}  // namespace detail

inline Mat solve_gamma(const Mat& G, const Mat& Y, int step, int mode) {
    auto [lo, hi] = detail::eig_range(G);
    (void)hi;
    if (!(lo > kEpsPd * (1.0 + std::abs(G.trace())))) {
        throw Error("SingularGamma", "step " + std::to_string(step) + ", mode " + std::to_string(mode) +
                                         ", min eigenvalue " + std::to_string(lo));
    }
    return G.llt().solve(Y);
}

// Gamma and M^j at label t = k - d. later[i] is the block at label t + 1 + i.
inline LabelBlock form_block(const SweepContext& cx, const ModeMats& Pn, const std::vector<const LabelBlock*>& later,
                             int step) {
    const int d = cx.d;
    const Mat& B = cx.model.B;
    const Mat BtP1 = B.transpose() * Pn[1];
    LabelBlock out;
    out.M.resize(static_cast<std::size_t>(d) + 1);
    out.K.resize(static_cast<std::size_t>(d) + 1);
    for (int c = 0; c < 3; ++c) {
        const Row2 w = cx.w.marg(c, d + 1);
        Mat G = cx.model.R + w(1) * BtP1 * B;
        Mat M0 = w(1) * BtP1 * cx.Apow[d + 1];
        for (int s = 1; s <= d; ++s) {
            const Row2 ws = cx.w.marg(c, d + 1 - s);
            const LabelBlock& L = *later[d - s];
            for (int a = 0; a < 2; ++a) {
                const Mat MsT = L.M[s][a].transpose();
                G -= ws(a) * MsT * L.K[s][a];
                M0 -= ws(a) * MsT * L.K[0][a] * cx.Apow[d + 1 - s];
            }
        }
        out.Gamma[c] = detail::symmetrized(G);
        out.M[0][c] = M0;
        for (int j = 1; j <= d; ++j) {
            Mat Mj = cx.w.law(c, j, d + 1)(1, 1) * BtP1 * cx.Apow[d + 1 - j] * B;
            for (int s = d - j + 2; s <= d; ++s) {
                const Row2 ws = cx.w.marg(c, d + 1 - s);
                const LabelBlock& L = *later[d - s];
                for (int a = 0; a < 2; ++a) Mj -= ws(a) * L.M[s][a].transpose() * L.K[s - d + j - 1][a];
            }
            for (int s = 1; s <= d + 1 - j; ++s) {
                const Mat2 lw = cx.w.law(c, j, d + 1 - s);
                const LabelBlock& L = *later[d - s];
                for (int b = 0; b < 2; ++b)
                    Mj -= lw(1, b) * L.M[s][b].transpose() * L.K[0][b] * cx.Apow[d + 1 - s - j] * B;
            }
            out.M[j][c] = Mj;
        }
    }
    for (int c = 0; c < 3; ++c) {
        // A zero-probability conditioning row is still solved; R keeps Gamma positive definite.
        for (int j = 0; j <= d; ++j) out.K[j][c] = solve_gamma(out.Gamma[c], out.M[j][c], step, c);
    }
    return out;
}

// P at label k from P(k+1) and the block whose label equals k.
inline ModeMats form_p(const SweepContext& cx, const ModeMats& Pn, const LabelBlock& atk) {
    const Mat& A = cx.model.A;
    ModeMats P;
    const Mat AtP0A = A.transpose() * Pn[0] * A;
    const Mat AtP1A = A.transpose() * Pn[1] * A;
    for (int c = 0; c < 3; ++c) {
        const Row2& r = cx.w.rows[c];
        Mat X = cx.model.Q + r(0) * AtP0A + r(1) * AtP1A - atk.M[0][c].transpose() * atk.K[0][c];
        P[c] = detail::symmetrized(X);
    }
    return P;
}

// (S^j)' at label k, j = 1..d; Sn holds label k+1 (empty means zero).
inline std::vector<ModeMats> form_s(const SweepContext& cx, const ModeMats& Pn, const std::vector<ModeMats>& Sn,
                                    const LabelBlock& atk) {
    const int d = cx.d;
    const Mat& A = cx.model.A;
    const Mat& B = cx.model.B;
    std::vector<ModeMats> S(static_cast<std::size_t>(d));
    for (int j = 1; j <= d; ++j) {
        for (int c = 0; c < 3; ++c) {
            const Row2& r = cx.w.rows[c];
            Mat v;
            if (j == 1) {
                v = r(1) * A.transpose() * Pn[1] * B;
            } else if (Sn.empty()) {
                v = Mat::Zero(cx.n, cx.m);
            } else {
                v = A.transpose() * (r(0) * Sn[j - 2][0] + r(1) * Sn[j - 2][1]);
            }
            S[j - 1][c] = v - atk.M[0][c].transpose() * atk.K[j][c];
        }
    }
    return S;
}

// F^j at label k for every window of modes. F[j-1][w] is m x n; window length is d-j+1 and
// bit i-1 of w holds theta_{k-i}. label_back(s) is the block at label k - s, s = 1..d-1.
template <class LabelBack>
std::vector<std::vector<Mat>> form_f(const SweepContext& cx, const std::vector<ModeMats>& S, LabelBack&& label_back) {
    const int d = cx.d;
    std::vector<std::vector<Mat>> F(static_cast<std::size_t>(d));
    for (int len = 1; len <= d; ++len) {
        const int jj = d - len + 1;
        auto& row = F[jj - 1];
        row.resize(std::size_t{1} << len);
        for (int w = 0; w < (1 << len); ++w) {
            Mat v = S[jj - 1][w & 1].transpose();
            for (int s = 1; s < len; ++s) {
                const int c = (w >> s) & 1;
                const LabelBlock& L = label_back(s);
                v -= L.K[d - len + s + 1][c].transpose() * F[d - s][w & ((1 << s) - 1)];
            }
            row[w] = v;
        }
    }
    return F;
}

}  // namespace ncs

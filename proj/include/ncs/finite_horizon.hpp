#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "ncs/chain.hpp"
#include "ncs/recursion.hpp"

namespace ncs {

// Backward-sweep tables. Gamma and M^j are labeled by the decision time t = k - d,
// P, S and F by k. Row kInit conditions on the law of theta_0 and is meaningful at t = 0.
struct RecursionTables {
    int N = 0, d = 0, n = 0, m = 0;
    std::vector<LabelBlock> blocks;                 // t = 0 .. N-d
    LabelBlock pad;                                 // terminal padding past N-d
    std::vector<ModeMats> P;                        // k = d .. N+1
    std::vector<std::vector<ModeMats>> S;           // k = d .. N, then j-1
    std::vector<std::vector<std::vector<Mat>>> F;   // k = d .. N, then j-1, then window

    const LabelBlock& block(int t) const {
        if (t < 0) throw Error("BadOffsets", "negative decision label");
        return t <= N - d ? blocks[static_cast<std::size_t>(t)] : pad;
    }
    const Mat& gamma(int t, int c) const { return block(t).Gamma[c]; }
    const Mat& M(int j, int t, int c) const { return block(t).M[j][c]; }
    const Mat& P_at(int k, int c) const { return P.at(static_cast<std::size_t>(k - d))[c]; }
    const Mat& S_at(int j, int k, int c) const { return S.at(static_cast<std::size_t>(k - d))[j - 1][c]; }
    // window bit i-1 holds theta_{k-i}; the window of F^j has d-j+1 modes.
    const Mat& F_at(int j, int k, int window) const {
        return F.at(static_cast<std::size_t>(k - d))[j - 1][static_cast<std::size_t>(window)];
    }
};

namespace detail {

inline void check_overflow(const Mat& X, int step) {
    if (!X.allFinite() || X.cwiseAbs().maxCoeff() > 1e300)
        throw Error("NumericalOverflow", "table norm exceeds 1e300 at step " + std::to_string(step));
}

}  // namespace detail

inline RecursionTables solve_finite(const SystemModel& model, int N) {
    if (N < model.d) throw Error("BadHorizon", "horizon N must be >= d");
    const SweepContext cx(model);
    const int d = cx.d;
    RecursionTables tb;
    tb.N = N;
    tb.d = d;
    tb.n = cx.n;
    tb.m = cx.m;
    tb.pad = terminal_block(cx.n, cx.m, d, model.R);
    tb.blocks.resize(static_cast<std::size_t>(N - d + 1));
    tb.P.resize(static_cast<std::size_t>(N - d + 2));
    tb.S.resize(static_cast<std::size_t>(N - d + 1));
    tb.F.resize(static_cast<std::size_t>(N - d + 1));
    tb.P.back() = {model.H, model.H, model.H};

    std::vector<const LabelBlock*> later(static_cast<std::size_t>(d));
    std::vector<ModeMats> Sn;
    for (int k = N; k >= d; --k) {
        const int t = k - d;
        for (int i = 0; i < d; ++i) later[i] = &tb.block(t + 1 + i);
        const ModeMats& Pn = tb.P[static_cast<std::size_t>(k + 1 - d)];
        tb.blocks[static_cast<std::size_t>(t)] = form_block(cx, Pn, later, k);
        const LabelBlock& atk = tb.block(k);
        ModeMats P = form_p(cx, Pn, atk);
        std::vector<ModeMats> S = form_s(cx, Pn, Sn, atk);
        auto F = form_f(cx, S, [&](int s) -> const LabelBlock& { return tb.block(k - s); });
        for (int c = 0; c < 3; ++c) {
            detail::check_overflow(P[c], k);
            detail::check_overflow(tb.blocks[static_cast<std::size_t>(t)].Gamma[c], k);
        }
        tb.P[static_cast<std::size_t>(t)] = std::move(P);
        tb.S[static_cast<std::size_t>(t)] = S;
        tb.F[static_cast<std::size_t>(t)] = std::move(F);
        Sn = std::move(S);
    }
    return tb;
}

// K0[t][c] = Gamma^{-1} M^0 and Kj[t][c][j-1] = Gamma^{-1} M^j for the decision u(t).
struct FiniteGain {
    std::vector<ModeMats> K0;
    std::vector<std::array<std::vector<Mat>, 3>> Kj;
};

inline FiniteGain finite_gain(const RecursionTables& tb) {
    FiniteGain g;
    for (const LabelBlock& b : tb.blocks) {
        g.K0.push_back(b.K[0]);
        std::array<std::vector<Mat>, 3> kj;
        for (int c = 0; c < 3; ++c)
            for (int j = 1; j <= tb.d; ++j) kj[c].push_back(b.K[j][c]);
        g.Kj.push_back(std::move(kj));
    }
    return g;
}

// u(t) = -K0 x(t) - sum_j Kj u(t-d+j-1); hist[l-1] = u(t-l).
inline Vec feedback(const Mat& K0, const std::vector<Mat>& Kj, const Vec& x, const std::vector<Vec>& hist) {
    Vec u = -K0 * x;
    const int d = static_cast<int>(Kj.size());
    for (int j = 1; j <= d; ++j) u -= Kj[j - 1] * hist[static_cast<std::size_t>(d - j)];
    return u;
}

namespace detail {

// Optimal cost given the sweep quantities that the cost formula needs:
// P_at(c) = P at label d, F_at(j, w) at label d, gamma_at(t, c) for labels t < d.
template <class PFn, class FFn, class GFn>
double optimal_cost_from(const SystemModel& model, PFn&& P_at, FFn&& F_at, GFn&& gamma_at) {
    const int d = model.d;
    const auto paths = enumerate_paths(model.chain.xi, model.chain.q0, d);
    std::vector<Vec> xd(paths.size());
    double J = 0.0;
    for (std::size_t p = 0; p < paths.size(); ++p) {
        Vec x = model.init.x0;
        double run = 0.0;
        for (int k = 0; k < d; ++k) {
            run += x.dot(model.Q * x);
            const Vec& u = model.init.u_pre[static_cast<std::size_t>(d - k - 1)];
            x = model.A * x + static_cast<double>(paths[p].modes[k]) * (model.B * u);
        }
        xd[p] = x;
        const int c = d > 0 ? paths[p].modes[d - 1] : kInit;
        J += paths[p].prob * (run + x.dot(P_at(c) * x));
    }
    for (int s = 1; s <= d; ++s) {
        // condition on theta_0..theta_{d-s-1}; F^{d-s+1} sees the window theta_{d-s}..theta_{d-1}
        std::map<std::vector<int>, std::pair<double, Vec>> groups;
        for (std::size_t p = 0; p < paths.size(); ++p) {
            const auto& md = paths[p].modes;
            std::vector<int> prefix(md.begin(), md.begin() + (d - s));
            int w = 0;
            for (int i = 1; i <= s; ++i) w |= md[d - i] << (i - 1);
            auto [it, fresh] = groups.try_emplace(prefix, 0.0, Vec::Zero(model.m()));
            it->second.first += paths[p].prob;
            it->second.second += paths[p].prob * (F_at(d - s + 1, w) * xd[p]);
        }
        for (const auto& [prefix, acc] : groups) {
            if (acc.first <= 0.0) continue;
            const int c = prefix.empty() ? kInit : prefix.back();
            const Mat& G = gamma_at(d - s, c);
            J -= acc.second.dot(G.llt().solve(acc.second)) / acc.first;
        }
    }
    return J;
}

}  // namespace detail

// Optimal expected cost from model.init over the horizon of the tables.
inline double optimal_cost_finite(const RecursionTables& tb, const SystemModel& model) {
    const int d = tb.d;
    return detail::optimal_cost_from(
        model, [&](int c) -> const Mat& { return tb.P_at(d, c); },
        [&](int j, int w) -> const Mat& { return tb.F_at(j, d, w); },
        [&](int t, int c) -> const Mat& { return tb.gamma(t, c); });
}

// Largest scaled residual of the three conditional-expectation identities between F, M^0 and M^j.
inline double expectation_identity_residual(const RecursionTables& tb, const SystemModel& model) {
    const int N = tb.N, d = tb.d;
    if (d == 0) return 0.0;
    const Mat &A = model.A, &B = model.B;
    const Mat2& xi = model.chain.xi;
    auto scaled = [](const Mat& a, const Mat& ref) {
        return (a - ref).cwiseAbs().maxCoeff() / (1.0 + ref.cwiseAbs().maxCoeff());
    };
    double e = 0.0;
    // E[F^d(k) A | theta_{k-2} = c] = M^0 at label k-1
    for (int k = d + 1; k <= N; ++k)
        for (int c = 0; c < 2; ++c) {
            Mat lhs = xi(c, 0) * tb.F_at(d, k, 0) * A + xi(c, 1) * tb.F_at(d, k, 1) * A;
            e = std::max(e, scaled(lhs, tb.M(0, k - 1, c)));
        }
    // E[F^{d-i}(k+1) A | theta_{k-i}..theta_{k-1}] = F^{d-i+1}(k)
    for (int k = d; k < N; ++k)
        for (int i = 1; i < d; ++i)
            for (int w = 0; w < (1 << i); ++w) {
                Mat lhs = Mat::Zero(tb.m, tb.n);
                for (int b = 0; b < 2; ++b) lhs += xi(w & 1, b) * tb.F_at(d - i, k + 1, (w << 1) | b) * A;
                e = std::max(e, scaled(lhs, tb.F_at(d - i + 1, k, w)));
            }
    // E[theta_k F^{d-j+1}(k+1) B | theta_{k-j} = c] = M^j at label k-j+1
    for (int k = d; k < N; ++k)
        for (int j = 1; j <= d; ++j)
            for (int c = 0; c < 2; ++c) {
                Mat lhs = Mat::Zero(tb.m, tb.m);
                for (int w = 0; w < (1 << j); ++w) {
                    if ((w & 1) == 0) continue;
                    double pr = 1.0;
                    int prev = c;
                    for (int i = j - 1; i >= 0; --i) {
                        const int th = (w >> i) & 1;
                        pr *= xi(prev, th);
                        prev = th;
                    }
                    lhs += pr * tb.F_at(d - j + 1, k + 1, w) * B;
                }
                e = std::max(e, scaled(lhs, tb.M(j, k - j + 1, c)));
            }
    return e;
}

// P(d) - sum_s (F^{d-s+1})' Gamma^{-1} F^{d-s+1} per assignment (theta_{-1}, theta_0, ..., theta_{d-1})
// with theta_{-1} ranging over the channel modes; the assignment code has theta_{-1} as its top bit.
// For d = 0 the two entries are P(0) per mode.
inline std::vector<Mat> finite_certificate_matrices(const RecursionTables& tb) {
    const int d = tb.d;
    std::vector<Mat> out;
    if (d == 0) {
        for (int c = 0; c < 2; ++c) out.push_back(tb.P_at(0, c));
        return out;
    }
    for (int code = 0; code < (1 << (d + 1)); ++code) {
        auto th = [&](int i) { return (code >> (d - 1 - i)) & 1; };  // i = -1 .. d-1
        Mat X = tb.P_at(d, th(d - 1));
        for (int s = 1; s <= d; ++s) {
            int w = 0;
            for (int i = 1; i <= s; ++i) w |= th(d - i) << (i - 1);
            const Mat& F = tb.F_at(d - s + 1, d, w);
            X -= F.transpose() * tb.gamma(d - s, th(d - s - 1)).llt().solve(F);
        }
        out.push_back(detail::symmetrized(X));
    }
    return out;
}

inline std::vector<double> finite_margins(const RecursionTables& tb) {
    std::vector<double> out;
    for (const Mat& X : finite_certificate_matrices(tb)) out.push_back(detail::eig_range(X).first);
    return out;
}

struct CostateReport {
    double stationarity = 0.0;  // max |R u(k-d) + E[theta_k B' lambda_k | F_{k-d-1}]|
    double costate = 0.0;       // max deviation from the closed-form costate
};

// Exhaustive check over all 2^(N+1) mode paths of the closed loop driven by the finite gains.
inline CostateReport costate_check(const RecursionTables& tb, const SystemModel& model) {
    const int N = tb.N, d = tb.d, n = tb.n, m = tb.m;
    if (n > 2 || m > 2 || N > 10 || d > 3) throw Error("TooLarge", "costate check needs n,m <= 2, N <= 10, d <= 3");
    const Mat2& xi = model.chain.xi;
    const Row2 r0(model.chain.q0, 1.0 - model.chain.q0);
    const int npath = 1 << (N + 1);  // bit i of a code holds theta_i
    auto bit = [](int code, int i) { return (code >> i) & 1; };
    auto mode_prob = [&](int prev, int th) { return prev < 0 ? r0(th) : xi(prev, th); };

    std::vector<std::vector<Vec>> X(static_cast<std::size_t>(npath));
    std::vector<std::vector<Vec>> U(static_cast<std::size_t>(npath));  // U[p][t + d] = u(t)
    for (int p = 0; p < npath; ++p) {
        auto& x = X[p];
        auto& u = U[p];
        x.assign(static_cast<std::size_t>(N + 2), Vec::Zero(n));
        u.assign(static_cast<std::size_t>(N + 1 + d), Vec::Zero(m));
        x[0] = model.init.x0;
        for (int l = 1; l <= d; ++l) u[d - l] = model.init.u_pre[static_cast<std::size_t>(l - 1)];
        for (int k = 0; k <= N; ++k) {
            if (k <= N - d) {
                const int c = k > 0 ? bit(p, k - 1) : kInit;
                std::vector<Vec> hist;
                for (int l = 1; l <= d; ++l) hist.push_back(u[k - l + d]);
                std::vector<Mat> Kj;
                for (int j = 1; j <= d; ++j) Kj.push_back(tb.block(k).K[j][c]);
                u[k + d] = feedback(tb.block(k).K[0][c], Kj, x[k], hist);
            }
            x[k + 1] = model.A * x[k] + static_cast<double>(bit(p, k)) * (model.B * u[k]);
        }
    }
    auto xs = [&](int code, int k) -> const Vec& { return X[code][k]; };
    auto us = [&](int code, int t) -> const Vec& { return U[code][t + d]; };

    // lam[k][prefix] holds lambda_{k-1}, a function of theta_0..theta_{k-1}
    std::vector<std::vector<Vec>> lam(static_cast<std::size_t>(N + 2));
    lam[N + 1].resize(static_cast<std::size_t>(npath));
    for (int p = 0; p < npath; ++p) lam[N + 1][p] = model.H * xs(p, N + 1);
    for (int k = N; k >= 0; --k) {
        lam[k].resize(std::size_t{1} << k);
        for (int p = 0; p < (1 << k); ++p) {
            const int prev = k > 0 ? bit(p, k - 1) : -1;
            Vec v = model.Q * xs(p, k);
            for (int b = 0; b < 2; ++b)
                v += mode_prob(prev, b) * (model.A.transpose() * lam[k + 1][p | (b << k)]);
            lam[k][p] = v;
        }
    }

    CostateReport rep;
    for (int k = d; k <= N; ++k) {
        const int len = k - d;
        for (int p = 0; p < (1 << len); ++p) {
            Vec v = model.R * us(p, k - d);
            for (int suf = 0; suf < (1 << (d + 1)); ++suf) {
                double pr = 1.0;
                int prev = len > 0 ? bit(p, len - 1) : -1;
                for (int i = 0; i <= d; ++i) {
                    const int th = bit(suf, i);
                    pr *= mode_prob(prev, th);
                    prev = th;
                }
                if (bit(suf, d) == 0 || pr == 0.0) continue;
                v += pr * (model.B.transpose() * lam[k + 1][p | (suf << len)]);
            }
            rep.stationarity = std::max(rep.stationarity, v.cwiseAbs().maxCoeff());
        }
    }
    for (int k = d; k <= N; ++k) {
        for (int p = 0; p < (1 << k); ++p) {
            auto win_bits = [&](int s) {  // bit i-1 = theta_{k-i}
                int w = 0;
                for (int i = 1; i <= s; ++i) w |= bit(p, k - i) << (i - 1);
                return w;
            };
            auto cond = [&](int i) { return k - i - 1 >= 0 ? bit(p, k - i - 1) : kInit; };
            const int c = k > 0 ? bit(p, k - 1) : kInit;
            Vec v = tb.P_at(k, c) * xs(p, k);
            for (int s = 1; s <= d; ++s) {
                const Mat& F = tb.F_at(d - s + 1, k, win_bits(s));
                v -= F.transpose() * (tb.block(k - s).K[0][cond(s)] * xs(p, k - s));
            }
            for (int s = 0; s < d; ++s)
                for (int i = d - s; i <= d; ++i) {
                    const Mat& F = tb.F_at(d - i + 1, k, win_bits(i));
                    v -= F.transpose() * (tb.block(k - i).K[s + 1 - d + i][cond(i)] * us(p, k - 2 * d + s));
                }
            rep.costate = std::max(rep.costate, (v - lam[k][p]).cwiseAbs().maxCoeff());
        }
    }
    return rep;
}

}  // namespace ncs

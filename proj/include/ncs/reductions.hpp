#pragma once

#include <algorithm>
#include <deque>
#include <vector>

#include "ncs/model.hpp"

namespace ncs {

struct ReductionMeta {
    int iterations = 0;
    bool converged = false;
};

namespace detail {

inline std::vector<Mat> powers(const Mat& A, int upto) {
    std::vector<Mat> p{Mat::Identity(A.rows(), A.cols())};
    for (int i = 1; i <= upto; ++i) p.push_back(p.back() * A);
    return p;
}

inline double sup(const Mat& X) { return X.size() ? X.cwiseAbs().maxCoeff() : 0.0; }

inline Mat solve_pd(const Mat& G, const Mat& Y) {
    if (!is_pd(G)) throw Error("SingularGamma", "reduction Gamma lost definiteness");
    return G.llt().solve(Y);
}

}  // namespace detail

// Independent, identically distributed loss: both rows of xi equal, q = P(drop).
struct BernoulliSolution {
    double q = 0.0;
    std::vector<Mat> Pj;  // P^1 .. P^{d+1}
    Mat M, M0, Gamma;
    std::vector<Mat> Mj;  // j = 1..d
    std::vector<Mat> F;   // F^j = M A^{j-1}
    Mat K0;
    std::vector<Mat> Kj;
    double certificate_min_eig = 0.0;  // min eigenvalue of sum_j P^j
    ReductionMeta meta;
};

inline BernoulliSolution solve_bernoulli(const SystemModel& model, double tol = 1e-13, int max_iter = 200000) {
    const Mat2& xi = model.chain.xi;
    if ((xi.row(0) - xi.row(1)).cwiseAbs().maxCoeff() > 1e-12) throw Error("NotIID", "rows of xi differ");
    const int n = model.n(), m = model.m(), d = model.d;
    const Mat &A = model.A, &B = model.B;
    const double q = xi(0, 0), p = 1.0 - q;
    const auto Ap = detail::powers(A, d);

    std::vector<Mat> Pj(static_cast<std::size_t>(d + 1), Mat::Zero(n, n));
    struct GM {
        Mat G, M;
    };
    std::deque<GM> hist(static_cast<std::size_t>(d), GM{model.R, Mat::Zero(m, n)});
    GM cur{model.R, Mat::Zero(m, n)};
    BernoulliSolution out;
    out.q = q;
    double last_scale = 0.0;
    for (int it = 1; it <= max_iter; ++it) {
        Mat sumP = Mat::Zero(n, n);
        for (const Mat& X : Pj) sumP += X;
        GM now{model.R + p * p * B.transpose() * sumP * B + q * p * B.transpose() * Pj[0] * B,
               p * B.transpose() * sumP * A};
        now.G = detail::symmetrized(now.G);
        const GM& atk = d == 0 ? now : hist[static_cast<std::size_t>(d - 1)];
        std::vector<Mat> next(static_cast<std::size_t>(d + 1));
        const Mat M0k = atk.M * Ap[d];
        try {
            next[0] = detail::symmetrized(A.transpose() * Pj[0] * A + model.Q -
                                          M0k.transpose() * detail::solve_pd(atk.G, M0k));
            if (d >= 1) next[1] = detail::symmetrized(-now.M.transpose() * detail::solve_pd(now.G, now.M));
        } catch (const Error& e) {
            if (!detail::blowing_up(e, last_scale)) throw;
            break;
        }
        for (int i = 2; i <= d; ++i) next[i] = A.transpose() * Pj[i - 1] * A;

        double inc = std::max(detail::sup(now.G - cur.G), detail::sup(now.M - cur.M));
        double scale = std::max(detail::sup(now.G), detail::sup(now.M));
        for (int i = 0; i <= d; ++i) {
            inc = std::max(inc, detail::sup(next[i] - Pj[i]));
            scale = std::max(scale, detail::sup(next[i]));
        }
        if (d > 0) {
            hist.push_front(now);
            hist.pop_back();
        }
        cur = now;
        Pj = std::move(next);
        out.meta.iterations = it;
        last_scale = scale;
        if (!(scale <= 1e12)) break;
        if (it > d + 1 && inc <= tol * (1.0 + scale)) {
            out.meta.converged = true;
            break;
        }
    }
    out.Pj = Pj;
    out.M = cur.M;
    out.Gamma = cur.G;
    out.M0 = cur.M * Ap[d];
    for (int j = 1; j <= d; ++j) {
        out.Mj.push_back(p * cur.M * Ap[d - j] * B);
        out.F.push_back(cur.M * Ap[j - 1]);
    }
    if (out.meta.converged) {
        out.K0 = detail::solve_pd(cur.G, out.M0);
        for (const Mat& Mj : out.Mj) out.Kj.push_back(detail::solve_pd(cur.G, Mj));
    }
    Mat sumP = Mat::Zero(n, n);
    for (const Mat& X : Pj) sumP += X;
    out.certificate_min_eig = detail::eig_range(detail::symmetrized(sumP)).first;
    return out;
}

// d = 0: coupled Riccati equations with a Markov jump.
struct DelayFreeSolution {
    std::array<Mat, 2> P, Gamma, M0, K0;
    std::array<double, 2> margins{};  // min eigenvalue of P_m
    ReductionMeta meta;
};

inline DelayFreeSolution solve_delay_free(const SystemModel& model, double tol = 1e-13, int max_iter = 200000) {
    if (model.d != 0) throw Error("BadDelay", "delay-free reduction needs d = 0");
    const int n = model.n();
    const Mat &A = model.A, &B = model.B;
    const Mat2& xi = model.chain.xi;
    DelayFreeSolution out;
    std::array<Mat, 2> P = {Mat::Zero(n, n), Mat::Zero(n, n)};
    double last_scale = 0.0;
    for (int it = 1; it <= max_iter; ++it) {
        std::array<Mat, 2> next;
        double inc = 0.0, scale = 0.0;
        bool blown = false;
        for (int c = 0; c < 2 && !blown; ++c) {
            out.Gamma[c] = detail::symmetrized(model.R + xi(c, 1) * B.transpose() * P[1] * B);
            out.M0[c] = xi(c, 1) * B.transpose() * P[1] * A;
            try {
                out.K0[c] = detail::solve_pd(out.Gamma[c], out.M0[c]);
            } catch (const Error& e) {
                if (!detail::blowing_up(e, last_scale)) throw;
                blown = true;
                break;
            }
            next[c] = detail::symmetrized(model.Q + xi(c, 0) * A.transpose() * P[0] * A +
                                          xi(c, 1) * A.transpose() * P[1] * A - out.M0[c].transpose() * out.K0[c]);
            inc = std::max(inc, detail::sup(next[c] - P[c]));
            scale = std::max(scale, detail::sup(next[c]));
        }
        if (blown) break;
        P = next;
        out.meta.iterations = it;
        last_scale = scale;
        if (!(scale <= 1e12)) break;
        if (inc <= tol * (1.0 + scale)) {
            out.meta.converged = true;
            break;
        }
    }
    for (int c = 0; c < 2; ++c) {
        out.Gamma[c] = detail::symmetrized(model.R + xi(c, 1) * B.transpose() * P[1] * B);
        out.M0[c] = xi(c, 1) * B.transpose() * P[1] * A;
        if (out.meta.converged) out.K0[c] = detail::solve_pd(out.Gamma[c], out.M0[c]);
        out.margins[c] = detail::eig_range(P[c]).first;
    }
    out.P = P;
    return out;
}

// Always-deliver channel with delay d.
struct LosslessSolution {
    Mat P, Gamma, M, M0;
    std::vector<Mat> Mj;  // M A^{d-j} B
    std::vector<Mat> F;   // F^{s+1} = M A^s
    Mat K0;
    std::vector<Mat> Kj;
    double certificate_min_eig = 0.0;
    ReductionMeta meta;
};

inline LosslessSolution solve_lossless(const SystemModel& model, double tol = 1e-13, int max_iter = 200000) {
    const int n = model.n(), m = model.m(), d = model.d;
    const Mat &A = model.A, &B = model.B;
    const auto Ap = detail::powers(A, d + 1);
    struct GM {
        Mat G, M;
    };
    std::deque<GM> hist(static_cast<std::size_t>(d), GM{model.R, Mat::Zero(m, n)});  // label t+1+i
    GM cur{model.R, Mat::Zero(m, n)};
    Mat P = Mat::Zero(n, n);
    LosslessSolution out;
    double last_scale = 0.0;
    for (int it = 1; it <= max_iter; ++it) {
        GM now;
        Mat Pn;
        try {
            Mat G = model.R + B.transpose() * P * B;
            for (int s = 1; s <= d; ++s) {
                const GM& L = hist[static_cast<std::size_t>(d - s)];
                const Mat X = L.M * Ap[d - s] * B;
                G -= X.transpose() * detail::solve_pd(L.G, X);
            }
            Mat M = B.transpose() * P * A;
            for (int i = 0; i < d; ++i) {
                const GM& L = hist[static_cast<std::size_t>(i)];
                M -= B.transpose() * Ap[i].transpose() * L.M.transpose() * detail::solve_pd(L.G, L.M) * Ap[i + 1];
            }
            now = GM{detail::symmetrized(G), M};
            const GM& atk = d == 0 ? now : hist[static_cast<std::size_t>(d - 1)];
            const Mat M0k = atk.M * Ap[d];
            Pn = detail::symmetrized(A.transpose() * P * A + model.Q - M0k.transpose() * detail::solve_pd(atk.G, M0k));
        } catch (const Error& e) {
            if (!detail::blowing_up(e, last_scale)) throw;
            break;
        }
        const double inc = std::max({detail::sup(Pn - P), detail::sup(now.G - cur.G), detail::sup(now.M - cur.M)});
        const double scale = std::max({detail::sup(Pn), detail::sup(now.G), detail::sup(now.M)});
        if (d > 0) {
            hist.push_front(now);
            hist.pop_back();
        }
        cur = now;
        P = Pn;
        out.meta.iterations = it;
        last_scale = scale;
        if (!(scale <= 1e12)) break;
        if (it > d + 1 && inc <= tol * (1.0 + scale)) {
            out.meta.converged = true;
            break;
        }
    }
    out.P = P;
    out.Gamma = cur.G;
    out.M = cur.M;
    out.M0 = cur.M * Ap[d];
    for (int s = 0; s < d; ++s) out.F.push_back(cur.M * Ap[s]);
    for (int j = 1; j <= d; ++j) out.Mj.push_back(cur.M * Ap[d - j] * B);
    if (!out.meta.converged) return out;
    out.K0 = detail::solve_pd(cur.G, out.M0);
    Mat cert = P;
    for (const Mat& F : out.F) cert -= F.transpose() * detail::solve_pd(cur.G, F);
    for (const Mat& Mj : out.Mj) out.Kj.push_back(detail::solve_pd(cur.G, Mj));
    out.certificate_min_eig = detail::eig_range(detail::symmetrized(cert)).first;
    return out;
}

}  // namespace ncs

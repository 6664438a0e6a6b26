#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ncs/error.hpp"

namespace ncs {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Mat2 = Eigen::Matrix2d;
using Row2 = Eigen::RowVector2d;

// Relative eigenvalue threshold for PD/PSD decisions.
inline constexpr double kEpsPd = 1e-10;

// Two-state loss channel. Mode 0 drops the packet, mode 1 delivers it.
struct MarkovChannel {
    Mat2 xi = Mat2::Identity();  // xi(i,j) = P(theta_{k+1}=j | theta_k=i)
    double q0 = 0.5;             // P(theta_0 = 0)
};

struct InitialData {
    Vec x0;
    std::vector<Vec> u_pre;                 // u(-1), ..., u(-d)
    std::optional<std::vector<Vec>> x_pre;  // x(-1), ..., x(-d)
};

struct SystemModel {
    Mat A, B;
    int d = 0;
    Mat Q, R, H;
    MarkovChannel chain;
    InitialData init;

    int n() const { return static_cast<int>(A.rows()); }
    int m() const { return static_cast<int>(B.cols()); }
};

namespace detail {

inline Mat symmetrized(const Mat& X) { return 0.5 * (X + X.transpose()); }

inline std::string shape(const Mat& X) {
    std::ostringstream os;
    os << X.rows() << "x" << X.cols();
    return os.str();
}

inline void expect_shape(const Mat& X, Eigen::Index r, Eigen::Index c, const char* name) {
    if (X.rows() != r || X.cols() != c) {
        std::ostringstream os;
        os << name << " is " << shape(X) << ", expected " << r << "x" << c;
        throw Error("DimensionMismatch", os.str());
    }
}

inline bool all_finite(const Mat& X) { return X.allFinite(); }

// Returns (min eigenvalue, max |eigenvalue|) of a symmetric matrix.
inline std::pair<double, double> eig_range(const Mat& S) {
    if (S.size() == 0) return {0.0, 0.0};
    Eigen::SelfAdjointEigenSolver<Mat> es(S, Eigen::EigenvaluesOnly);
    const Vec& ev = es.eigenvalues();
    return {ev.minCoeff(), ev.cwiseAbs().maxCoeff()};
}

inline bool is_psd(const Mat& S, double eps = kEpsPd) {
    auto [lo, hi] = eig_range(S);
    return lo >= -eps * (1.0 + hi);
}

inline bool is_pd(const Mat& S, double eps = kEpsPd) {
    auto [lo, hi] = eig_range(S);
    return lo > eps * (1.0 + hi);
}

}  // namespace detail

inline SystemModel validate_model(SystemModel raw) {
    using detail::expect_shape;
    if (raw.d < 0) throw Error("BadDelay", "d = " + std::to_string(raw.d) + " < 0");
    const Eigen::Index n = raw.A.rows();
    if (n == 0 || raw.A.cols() != n)
        throw Error("DimensionMismatch", "A must be square and nonempty, got " + detail::shape(raw.A));
    if (raw.B.rows() != n || raw.B.cols() == 0)
        throw Error("DimensionMismatch", "B is " + detail::shape(raw.B) + ", expected " +
                                             std::to_string(n) + "xm with m >= 1");
    const Eigen::Index m = raw.B.cols();
    expect_shape(raw.Q, n, n, "Q");
    expect_shape(raw.R, m, m, "R");
    expect_shape(raw.H, n, n, "H");
    for (const Mat* X : {&raw.A, &raw.B, &raw.Q, &raw.R, &raw.H})
        if (!detail::all_finite(*X)) throw Error("DimensionMismatch", "matrix entries must be finite");

    raw.Q = detail::symmetrized(raw.Q);
    raw.R = detail::symmetrized(raw.R);
    raw.H = detail::symmetrized(raw.H);
    if (!detail::is_psd(raw.Q)) throw Error("NotPSD", "Q");
    if (!detail::is_psd(raw.H)) throw Error("NotPSD", "H");
    if (!detail::is_pd(raw.R)) throw Error("NotPD", "R");

    const Mat2& xi = raw.chain.xi;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j)
            if (!(xi(i, j) >= 0.0 && xi(i, j) <= 1.0))
                throw Error("NotStochastic", "xi entries must lie in [0,1]");
        if (std::abs(xi.row(i).sum() - 1.0) > 1e-12)
            throw Error("NotStochastic", "row " + std::to_string(i) + " of xi does not sum to 1");
    }
    if (!(raw.chain.q0 >= 0.0 && raw.chain.q0 <= 1.0))
        throw Error("NotStochastic", "q0 must lie in [0,1]");

    InitialData& in = raw.init;
    if (in.x0.size() == 0) in.x0 = Vec::Zero(n);
    if (in.x0.size() != n) throw Error("DimensionMismatch", "x0 has wrong length");
    if (static_cast<int>(in.u_pre.size()) != raw.d)
        throw Error("BadInit", "u_pre has " + std::to_string(in.u_pre.size()) + " entries, expected " +
                                   std::to_string(raw.d));
    for (const Vec& u : in.u_pre)
        if (u.size() != m) throw Error("DimensionMismatch", "u_pre entry has wrong length");
    if (in.x_pre) {
        if (static_cast<int>(in.x_pre->size()) != raw.d)
            throw Error("BadInit", "x_pre has " + std::to_string(in.x_pre->size()) +
                                       " entries, expected " + std::to_string(raw.d));
        for (const Vec& x : *in.x_pre)
            if (x.size() != n) throw Error("DimensionMismatch", "x_pre entry has wrong length");
    }
    return raw;
}

// Symmetric square root by eigen-decomposition; small negative eigenvalues are clamped.
inline Mat sqrt_psd(const Mat& Q) {
    const Mat S = detail::symmetrized(Q);
    Eigen::SelfAdjointEigenSolver<Mat> es(S);
    const Vec& ev = es.eigenvalues();
    const double hi = ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0;
    if (ev.size() && ev.minCoeff() < -1e-8 * (1.0 + hi)) throw Error("NotPSD", "sqrt_psd argument");
    const Vec root = ev.cwiseMax(0.0).cwiseSqrt();
    Mat out = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
    return detail::symmetrized(out);
}

// Kalman rank test on (A, Q^{1/2}).
inline bool exact_observability(const Mat& A, const Mat& Q) {
    const Eigen::Index n = A.rows();
    const Mat C = sqrt_psd(Q);
    Mat O(n * n, n);
    Mat blk = C;
    for (Eigen::Index i = 0; i < n; ++i) {
        O.middleRows(i * n, n) = blk;
        blk = blk * A;
    }
    Eigen::JacobiSVD<Mat> svd(O);
    const Vec& sv = svd.singularValues();
    const double smax = sv.size() ? sv.maxCoeff() : 0.0;
    if (smax == 0.0) return false;
    const double thr = static_cast<double>(n) * std::numeric_limits<double>::epsilon() * smax;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > thr) ++rank;
    return rank == n;
}

}  // namespace ncs

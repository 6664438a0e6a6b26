#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "ncs/model.hpp"

namespace ncs {

inline Mat2 n_step_matrix(const Mat2& xi, int s) {
    if (s < 0) throw Error("BadOffsets", "negative step count");
    Mat2 out = Mat2::Identity();
    for (int i = 0; i < s; ++i) out = out * xi;
    return out;
}

// table(a,b) = P(theta_{tau+s}=a, theta_{tau+t}=b | theta_tau = cond_mode).
struct TwoTimeLaw {
    int cond_mode = 0;
    int s = 0, t = 0;
    Mat2 table = Mat2::Zero();

    template <class F>
    auto expect(F&& f) const {
        auto acc = table(0, 0) * f(0, 0);
        acc = acc + table(0, 1) * f(0, 1);
        acc = acc + table(1, 0) * f(1, 0);
        acc = acc + table(1, 1) * f(1, 1);
        return acc;
    }
};

inline TwoTimeLaw two_time_law(const Mat2& xi, int i, int s, int t) {
    if (s < 0 || s > t) throw Error("BadOffsets", "need 0 <= s <= t");
    if (i < 0 || i > 1) throw Error("BadOffsets", "mode must be 0 or 1");
    TwoTimeLaw law{i, s, t, Mat2::Zero()};
    const Row2 ms = n_step_matrix(xi, s).row(i);
    law.table = ms.transpose().asDiagonal() * n_step_matrix(xi, t - s);
    return law;
}

struct WeightedPath {
    std::vector<int> modes;
    double prob = 1.0;
};

// All 2^L sequences whose first mode has distribution rho and later modes follow xi.
inline std::vector<WeightedPath> enumerate_paths_from(const Mat2& xi, const Row2& rho, int L) {
    if (L < 0) throw Error("BadOffsets", "negative path length");
    if (L > 25) throw Error("TooLong", "path enumeration limited to L <= 25");
    std::vector<WeightedPath> out;
    out.reserve(std::size_t{1} << L);
    for (std::uint32_t code = 0; code < (std::uint32_t{1} << L); ++code) {
        WeightedPath p;
        p.modes.resize(static_cast<std::size_t>(L));
        for (int i = 0; i < L; ++i) {
            const int th = static_cast<int>((code >> (L - 1 - i)) & 1u);
            p.modes[static_cast<std::size_t>(i)] = th;
            p.prob *= (i == 0) ? rho(th) : xi(p.modes[static_cast<std::size_t>(i - 1)], th);
        }
        out.push_back(std::move(p));
    }
    return out;
}

// Paths theta_0..theta_{L-1} with P(theta_0 = 0) = q0.
inline std::vector<WeightedPath> enumerate_paths(const Mat2& xi, double q0, int L) {
    return enumerate_paths_from(xi, Row2(q0, 1.0 - q0), L);
}

// L transitions out of a fixed current mode.
inline std::vector<WeightedPath> enumerate_paths_from_mode(const Mat2& xi, int mode, int L) {
    return enumerate_paths_from(xi, xi.row(mode), L);
}

// Per-stream generator keyed on (master_seed, stream_id); independent of execution order.
class Stream {
public:
    Stream(std::uint64_t master_seed, std::uint64_t stream_id) {
        std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                          static_cast<std::uint32_t>(stream_id), static_cast<std::uint32_t>(stream_id >> 32)};
        gen_.seed(seq);
    }
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
    int first_mode(double q0) { return uniform() < q0 ? 0 : 1; }
    int next_mode(const Mat2& xi, int cur) { return uniform() < xi(cur, 0) ? 0 : 1; }

private:
    std::mt19937_64 gen_;
};

inline std::vector<int> sample_path(const Mat2& xi, double q0, int length, std::uint64_t seed,
                                    std::uint64_t stream_id = 0) {
    std::vector<int> out;
    if (length <= 0) return out;
    out.reserve(static_cast<std::size_t>(length));
    Stream rng(seed, stream_id);
    out.push_back(rng.first_mode(q0));
    for (int k = 1; k < length; ++k) out.push_back(rng.next_mode(xi, out.back()));
    return out;
}

}  // namespace ncs

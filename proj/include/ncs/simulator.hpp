#pragma once

#include <atomic>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <thread>
#include <vector>

#include "ncs/chain.hpp"
#include "ncs/stationary.hpp"

namespace ncs {

// exx[k] estimates E[x(k)'x(k)] for k = 0..steps. The cost of one trajectory is
// sum_{t<steps} x(t)'Qx(t) + u(t)'Ru(t).
struct TrajectoryStats {
    int steps = 0;
    std::vector<double> exx, exx_stderr;
    double cost_mean = 0.0, cost_stderr = 0.0;
    int n_traj = 0;
    std::uint64_t master_seed = 0;
    int n_diverged = 0;
};

// Input decided at time t from theta_{t-1} (kInit at t = 0), x(t) and hist[l-1] = u(t-l).
using Policy = std::function<Vec(int c, int t, const Vec& x, const std::vector<Vec>& hist)>;

namespace detail {

// Running mean and sum of squared deviations; merged in a fixed order.
struct Moments {
    double n = 0.0, mean = 0.0, m2 = 0.0;
    long inf = 0;

    void add(double v) {
        if (!std::isfinite(v)) {
            ++inf;
            return;
        }
        n += 1.0;
        const double delta = v - mean;
        mean += delta / n;
        m2 += delta * (v - mean);
    }
    void merge(const Moments& o) {
        inf += o.inf;
        if (o.n == 0.0) return;
        if (n == 0.0) {
            n = o.n;
            mean = o.mean;
            m2 = o.m2;
            return;
        }
        const double tot = n + o.n;
        const double delta = o.mean - mean;
        mean += delta * o.n / tot;
        m2 += o.m2 + delta * delta * n * o.n / tot;
        n = tot;
    }
    double value() const { return inf ? std::numeric_limits<double>::infinity() : mean; }
    double stderr_() const {
        if (inf) return std::numeric_limits<double>::infinity();
        return n > 1.0 ? std::sqrt(m2 / (n - 1.0) / n) : 0.0;
    }
};

struct ChunkResult {
    std::vector<Moments> exx;
    Moments cost;
    int diverged = 0;
};

inline void run_trajectory(const SystemModel& model, const Policy& policy, int K, std::uint64_t seed, std::uint64_t idx,
                           ChunkResult& acc) {
    const int d = model.d;
    Stream rng(seed, idx);
    Vec x = model.init.x0;
    std::deque<Vec> hist(model.init.u_pre.begin(), model.init.u_pre.end());
    std::vector<Vec> hv;
    int prev = kInit;
    double cost = 0.0;
    bool blown = false;
    for (int t = 0; t < K; ++t) {
        acc.exx[t].add(blown ? std::numeric_limits<double>::infinity() : x.squaredNorm());
        if (blown) continue;
        const int th = t == 0 ? rng.first_mode(model.chain.q0) : rng.next_mode(model.chain.xi, prev);
        hv.assign(hist.begin(), hist.end());
        const Vec u = policy(prev, t, x, hv);
        cost += x.dot(model.Q * x) + u.dot(model.R * u);
        const Vec& applied = d == 0 ? u : hist.back();
        x = model.A * x + static_cast<double>(th) * (model.B * applied);
        if (d > 0) {
            hist.push_front(u);
            hist.pop_back();
        }
        prev = th;
        if (!x.allFinite() || x.norm() > 1e150) blown = true;
    }
    acc.exx[K].add(blown ? std::numeric_limits<double>::infinity() : x.squaredNorm());
    acc.cost.add(blown ? std::numeric_limits<double>::infinity() : cost);
    if (blown) ++acc.diverged;
}

}  // namespace detail

inline TrajectoryStats simulate(const SystemModel& model, const Policy& policy, int K, int n_traj,
                                std::uint64_t master_seed, unsigned threads = 0) {
    if (K < 1) throw Error("BadSteps", "simulation needs K >= 1");
    if (n_traj < 1) throw Error("BadSteps", "simulation needs at least one trajectory");
    constexpr int kChunk = 64;
    const int nchunks = (n_traj + kChunk - 1) / kChunk;
    std::vector<detail::ChunkResult> chunks(static_cast<std::size_t>(nchunks));
    for (auto& c : chunks) c.exx.resize(static_cast<std::size_t>(K + 1));

    std::atomic<int> next{0};
    auto worker = [&]() {
        for (int c = next++; c < nchunks; c = next++) {
            const int lo = c * kChunk, hi = std::min(n_traj, lo + kChunk);
            for (int i = lo; i < hi; ++i)
                detail::run_trajectory(model, policy, K, master_seed, static_cast<std::uint64_t>(i), chunks[c]);
        }
    };
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(nchunks));
    std::vector<std::thread> pool;
    for (unsigned i = 1; i < threads; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    detail::ChunkResult total;
    total.exx.resize(static_cast<std::size_t>(K + 1));
    for (const auto& c : chunks) {
        for (int k = 0; k <= K; ++k) total.exx[k].merge(c.exx[k]);
        total.cost.merge(c.cost);
        total.diverged += c.diverged;
    }
    TrajectoryStats st;
    st.steps = K;
    st.n_traj = n_traj;
    st.master_seed = master_seed;
    st.n_diverged = total.diverged;
    for (int k = 0; k <= K; ++k) {
        st.exx.push_back(total.exx[k].value());
        st.exx_stderr.push_back(total.exx[k].stderr_());
    }
    st.cost_mean = total.cost.value();
    st.cost_stderr = total.cost.stderr_();
    return st;
}

inline Policy gain_policy(const GainLaw& law) {
    return [law](int c, int, const Vec& x, const std::vector<Vec>& hist) {
        return feedback(law.K0[c], law.Kj[c], x, hist);
    };
}

// Open-loop inputs u(0), u(1), ...; zero once the script runs out.
inline Policy scripted_policy(std::vector<Vec> inputs, int m) {
    return [inputs = std::move(inputs), m](int, int t, const Vec&, const std::vector<Vec>&) {
        return t < static_cast<int>(inputs.size()) ? inputs[static_cast<std::size_t>(t)] : Vec(Vec::Zero(m));
    };
}

inline TrajectoryStats simulate(const SystemModel& model, const GainLaw& law, int K, int n_traj,
                                std::uint64_t master_seed, unsigned threads = 0) {
    return simulate(model, gain_policy(law), K, n_traj, master_seed, threads);
}

struct ExactMoments {
    std::vector<double> exx;  // k = 0..K
    double cost = 0.0;        // expected cost over t < K
};

inline ExactMoments exact_moments(const SystemModel& model, const GainLaw& law, int K) {
    const MomentOperator op = moment_operator(model, law);
    const int n = model.n();
    const Vec z0 = stack_initial(model);
    ExactMoments out;
    out.exx.push_back(model.init.x0.squaredNorm());
    out.cost = z0.dot(stage_weight(model, law, kInit) * z0);
    const std::array<Mat, 2> C = {stage_weight(model, law, 0), stage_weight(model, law, 1)};
    MomentPair V = first_moments(op, model, z0);
    for (int k = 1; k <= K; ++k) {
        out.exx.push_back(V[0].topLeftCorner(n, n).trace() + V[1].topLeftCorner(n, n).trace());
        if (k < K) {
            out.cost += C[0].cwiseProduct(V[0]).sum() + C[1].cwiseProduct(V[1]).sum();
            V = step_moments(op, model, V);
        }
    }
    return out;
}

}  // namespace ncs

#pragma once

// Random models and data shared by the unit tests and the acceptance runner.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "grudw/encode.hpp"
#include "grudw/grid.hpp"
#include "grudw/grud.hpp"
#include "grudw/mtlr.hpp"
#include "grudw/random.hpp"
#include "grudw/weibull.hpp"

namespace fixture {

using namespace grudw;

// --- AFT ---

struct AftSample {
    Eigen::MatrixXd X;
    Eigen::VectorXd times;
    std::vector<bool> events;
};

// ln tau = x'beta + sigma * eps with eps standard minimum extreme value;
// independent uniform censoring whose upper limit is tuned to the target.
inline AftSample simulate_aft(std::size_t n, const Eigen::VectorXd& beta, double sigma, double censored_target,
                              std::uint64_t seed) {
    Rng rng(seed);
    const Eigen::Index p = beta.size() - 1;
    AftSample s;
    s.X.resize(Eigen::Index(n), p);
    Eigen::VectorXd latent(static_cast<Eigen::Index>(n)), u(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < Eigen::Index(n); ++i) {
        for (Eigen::Index j = 0; j < p; ++j) s.X(i, j) = rng.normal();
        const double lp = beta(0) + s.X.row(i).dot(beta.tail(p));
        double v;
        do {
            v = rng.uniform();
        } while (v <= 0.0);
        latent(i) = std::exp(lp + sigma * std::log(-std::log(v)));
        u(i) = rng.uniform();
    }
    auto frac = [&](double a) {
        std::size_t c = 0;
        for (Eigen::Index i = 0; i < latent.size(); ++i) c += latent(i) > a * u(i) ? 1 : 0;
        return double(c) / double(n);
    };
    double lo = 1e-3, hi = 1e6;
    for (int it = 0; it < 200; ++it) {
        const double mid = std::sqrt(lo * hi);
        (frac(mid) > censored_target ? lo : hi) = mid;
    }
    s.times.resize(Eigen::Index(n));
    for (Eigen::Index i = 0; i < Eigen::Index(n); ++i) {
        const double c = hi * u(i);
        s.events.push_back(latent(i) <= c);
        s.times(i) = std::max(std::min(latent(i), c), 1e-6);
    }
    return s;
}

// --- GRU-D ---

// Random sequence over the first `T` gaps of the standard grid.
inline EncodedSequence random_sequence(Eigen::Index F, Eigen::Index T, std::uint64_t seed, double p_obs = 0.4) {
    Rng rng(seed);
    const auto grid = build_grid();
    EncodedSequence s;
    s.id = "r" + std::to_string(seed);
    s.x = Eigen::MatrixXd::Zero(F, T);
    s.m = Eigen::MatrixXd::Zero(F, T);
    s.gap_days.resize(T);
    for (Eigen::Index t = 0; t < T; ++t) s.gap_days(t) = grid.gap(std::size_t(t + 30));
    s.gap_days(0) = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index d = 0; d < F; ++d) {
            if (rng.bernoulli(p_obs)) {
                s.m(d, t) = 1.0;
                s.x(d, t) = rng.normal();
            }
        }
    }
    s.empirical_means = Eigen::VectorXd(F);
    for (Eigen::Index d = 0; d < F; ++d) s.empirical_means(d) = rng.normal(0.0, 0.3);
    recompute_delta(s.m, s.gap_days, s.delta);
    s.valid_steps = std::size_t(T);
    return s;
}

// Every parameter perturbed so no ReLU in the decays sits exactly on its kink.
inline GrudParameters random_parameters(Eigen::Index F, Eigen::Index H, std::uint64_t seed) {
    auto p = init_parameters(F, H, seed, 2.0);
    Rng rng(seed + 1);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.flat()(i) += rng.normal(0.0, 0.3);
    for (Eigen::Index d = 0; d < F; ++d) p.input_decay_w()(d) = std::abs(p.input_decay_w()(d)) + 0.5;
    for (Eigen::Index i = 0; i < H; ++i) p.hidden_decay_w()(i) = std::abs(p.hidden_decay_w()(i)) + 0.5;
    return p;
}

inline std::vector<double> targets_for(Eigen::Index T) {
    std::vector<double> tau(static_cast<std::size_t>(T));
    for (Eigen::Index t = 0; t < T; ++t) tau[std::size_t(t)] = 2.5 - 0.08 * double(t);
    return tau;
}

inline double sequence_loss(const GrudParameters& p, const EncodedSequence& s, const std::vector<double>& tau) {
    const auto tr = forward(p, s);
    double sum = 0.0;
    for (std::size_t t = 0; t < tr.outputs.size(); ++t) sum += composite_loss(tr.outputs[t], tau[t]).total;
    return sum;
}

inline GrudParameters sequence_gradient(const GrudParameters& p, const EncodedSequence& s,
                                        const std::vector<double>& tau) {
    const auto tr = forward(p, s, true);
    const auto T = Eigen::Index(tr.outputs.size());
    Eigen::VectorXd dk(T), dl(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        const auto g = composite_loss_grad(tr.outputs[std::size_t(t)], tau[std::size_t(t)]);
        dk(t) = g.d_kappa;
        dl(t) = g.d_lambda;
    }
    auto grad = p.zeros_like();
    backward(p, s, *tr.cache, dk, dl, grad);
    return grad;
}

// --- MTLR ---

inline MtlrModel random_mtlr(Eigen::Index F, std::vector<double> grid, std::uint64_t seed, double scale = 1.0) {
    auto m = make_mtlr(F, std::move(grid));
    Rng rng(seed);
    for (Eigen::Index i = 0; i < m.theta.size(); ++i) m.theta.data()[i] = rng.normal(0.0, scale);
    for (Eigen::Index i = 0; i < m.b.size(); ++i) m.b(i) = rng.normal(0.0, scale);
    return m;
}

struct MtlrData {
    Eigen::MatrixXd X;
    Eigen::VectorXd t;
    std::vector<bool> e;
};

inline MtlrData mtlr_sample(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    MtlrData d;
    d.X.resize(Eigen::Index(n), 3);
    d.t.resize(Eigen::Index(n));
    for (Eigen::Index i = 0; i < Eigen::Index(n); ++i) {
        for (int j = 0; j < 3; ++j) d.X(i, j) = rng.normal();
        const double ev = rng.weibull(1.4, 2.5 * std::exp(0.4 * d.X(i, 0) - 0.3 * d.X(i, 1)));
        const double c = rng.uniform(0.0, 8.0);
        d.e.push_back(ev <= c);
        d.t(i) = std::min(ev, c);
    }
    return d;
}

// --- metrics ---

struct SurvivalSample {
    std::vector<double> t;
    std::vector<bool> e;
    std::vector<double> score;
};

// Continuous times with a sprinkling of exact ties, scores on a coarse lattice
// so tied scores happen too.
inline SurvivalSample random_cohort(std::size_t n, double censoring, std::uint64_t seed, bool tie_times = true) {
    Rng rng(seed);
    SurvivalSample c;
    for (std::size_t i = 0; i < n; ++i) {
        double t = rng.weibull(1.3, 3.0);
        if (tie_times && rng.bernoulli(0.1)) t = std::round(t);
        c.t.push_back(std::max(t, 0.05));
        c.e.push_back(!rng.bernoulli(censoring));
        c.score.push_back(std::round(rng.normal() * 8.0) / 8.0 + 0.2 * t);
    }
    return c;
}

inline std::vector<double> probs(const SurvivalSample& c) {
    std::vector<double> p;
    for (double s : c.score) p.push_back(1.0 / (1.0 + std::exp(s)));
    return p;
}

}  // namespace fixture

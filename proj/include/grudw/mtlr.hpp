#pragma once

// Multi-target logistic regression over yearly time points t_1 < ... < t_m.
// An event falls in interval j (0..m) when exactly j time points lie strictly
// before it; interval m means surviving past t_m. With s_i = theta_i . x + b_i,
// the score of interval k is f(k) = sum_{i > k} s_i and
// P(j | x) = exp f(j) / sum_k exp f(k).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <fmt/format.h>

#include "error.hpp"
#include "optim.hpp"

namespace grudw {

struct MtlrModel {
    Eigen::MatrixXd theta;  // m x F
    Eigen::VectorXd b;      // m
    std::vector<double> time_points{1.0, 2.0, 3.0, 4.0, 5.0};
    double l2_strength = 1.0;

    Eigen::Index m() const noexcept { return Eigen::Index(time_points.size()); }
};

inline MtlrModel make_mtlr(Eigen::Index n_features, std::vector<double> time_points = {1.0, 2.0, 3.0, 4.0, 5.0},
                           double l2_strength = 1.0) {
    for (std::size_t i = 0; i < time_points.size(); ++i) {
        if (!(time_points[i] > 0.0) || (i > 0 && time_points[i] <= time_points[i - 1])) {
            throw DataError("mtlr: time points must be positive and strictly increasing");
        }
    }
    if (time_points.empty()) throw DataError("mtlr: need at least one time point");
    MtlrModel model;
    model.time_points = std::move(time_points);
    model.theta = Eigen::MatrixXd::Zero(model.m(), n_features);
    model.b = Eigen::VectorXd::Zero(model.m());
    model.l2_strength = l2_strength;
    return model;
}

/// Number of time points strictly before t.
inline Eigen::Index mtlr_interval(const MtlrModel& model, double t) {
    return Eigen::Index(std::lower_bound(model.time_points.begin(), model.time_points.end(), t) -
                        model.time_points.begin());
}

namespace detail {

inline double log_sum_exp(const Eigen::VectorXd& v, Eigen::Index from = 0) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = from; i < v.size(); ++i) mx = std::max(mx, v(i));
    double s = 0.0;
    for (Eigen::Index i = from; i < v.size(); ++i) s += std::exp(v(i) - mx);
    return mx + std::log(s);
}

inline Eigen::VectorXd interval_scores(const MtlrModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
    const Eigen::Index m = model.m();
    const Eigen::VectorXd s = model.theta * x + model.b;
    Eigen::VectorXd f(m + 1);
    f(m) = 0.0;
    for (Eigen::Index k = m - 1; k >= 0; --k) f(k) = f(k + 1) + s(k);
    return f;
}

}  // namespace detail

/// log P(interval j | x) for every j = 0..m.
inline Eigen::VectorXd mtlr_log_probs(const MtlrModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
    const Eigen::VectorXd f = detail::interval_scores(model, x);
    return f.array() - detail::log_sum_exp(f);
}

inline double mtlr_sequence_logprob(const MtlrModel& model, const Eigen::Ref<const Eigen::VectorXd>& x,
                                    Eigen::Index j) {
    if (j < 0 || j > model.m()) throw std::out_of_range("mtlr_sequence_logprob: interval out of range");
    return mtlr_log_probs(model, x)(j);
}

/// Log-likelihood of one patient. A censored patient contributes the mass of
/// every interval from the one containing c onward.
inline double mtlr_patient_loglik(const MtlrModel& model, const Eigen::Ref<const Eigen::VectorXd>& x, double t,
                                  bool event) {
    const Eigen::VectorXd f = detail::interval_scores(model, x);
    const double norm = detail::log_sum_exp(f);
    const Eigen::Index j = mtlr_interval(model, t);
    return (event ? f(j) : detail::log_sum_exp(f, j)) - norm;
}

/// Penalised objective: sum of log-likelihoods minus l2 * ||theta||^2.
inline double mtlr_objective(const MtlrModel& model, const Eigen::MatrixXd& X, const Eigen::VectorXd& times,
                             const std::vector<bool>& events) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) ll += mtlr_patient_loglik(model, X.row(i).transpose(), times(i), events[std::size_t(i)]);
    return ll - model.l2_strength * model.theta.squaredNorm();
}

struct MtlrGradient {
    Eigen::MatrixXd theta;
    Eigen::VectorXd b;
};

/// Gradient of mtlr_objective.
inline MtlrGradient mtlr_gradient(const MtlrModel& model, const Eigen::MatrixXd& X, const Eigen::VectorXd& times,
                                  const std::vector<bool>& events) {
    const Eigen::Index m = model.m();
    MtlrGradient g{Eigen::MatrixXd::Zero(m, X.cols()), Eigen::VectorXd::Zero(m)};
    Eigen::VectorXd ds(m);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const Eigen::VectorXd x = X.row(i).transpose();
        const Eigen::VectorXd f = detail::interval_scores(model, x);
        const Eigen::VectorXd p = (f.array() - detail::log_sum_exp(f)).exp();
        const Eigen::Index j = mtlr_interval(model, times(i));
        Eigen::VectorXd q = Eigen::VectorXd::Zero(m + 1);
        if (events[std::size_t(i)]) {
            q(j) = 1.0;
        } else {
            const double lse = detail::log_sum_exp(f, j);
            for (Eigen::Index k = j; k <= m; ++k) q(k) = std::exp(f(k) - lse);
        }
        // d f(k) / d s_r = 1 when k < r (r = 1..m), so d/ds_r is the mass below r.
        double cum_q = 0.0;
        double cum_p = 0.0;
        for (Eigen::Index r = 0; r < m; ++r) {
            cum_q += q(r);
            cum_p += p(r);
            ds(r) = cum_q - cum_p;
        }
        g.theta.noalias() += ds * x.transpose();
        g.b += ds;
    }
    g.theta -= 2.0 * model.l2_strength * model.theta;
    return g;
}

/// Hessian of mtlr_objective in the flat layout used by mtlr_fit: theta
/// column-major (m x F), then b. With z = (x, 1) the per-patient block is
/// kron(z z', Cov_q(y) - Cov_p(y)), y_r = 1{interval <= r}.
inline Eigen::MatrixXd mtlr_hessian(const MtlrModel& model, const Eigen::MatrixXd& X, const Eigen::VectorXd& times,
                                    const std::vector<bool>& events) {
    const Eigen::Index m = model.m();
    const Eigen::Index F = X.cols();
    // w[r][s] holds the per-patient curvature of (s_r, s_s).
    Eigen::MatrixXd W(X.rows(), m * m);
    Eigen::VectorXd cq(m), cp(m);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const Eigen::VectorXd x = X.row(i).transpose();
        const Eigen::VectorXd f = detail::interval_scores(model, x);
        const Eigen::VectorXd p = (f.array() - detail::log_sum_exp(f)).exp();
        const Eigen::Index j = mtlr_interval(model, times(i));
        Eigen::VectorXd q = Eigen::VectorXd::Zero(m + 1);
        if (events[std::size_t(i)]) {
            q(j) = 1.0;
        } else {
            const double lse = detail::log_sum_exp(f, j);
            for (Eigen::Index k = j; k <= m; ++k) q(k) = std::exp(f(k) - lse);
        }
        double aq = 0.0, ap = 0.0;
        for (Eigen::Index r = 0; r < m; ++r) {
            aq += q(r);
            ap += p(r);
            cq(r) = aq;
            cp(r) = ap;
        }
        for (Eigen::Index r = 0; r < m; ++r) {
            for (Eigen::Index c = 0; c < m; ++c) {
                const Eigen::Index lo = std::min(r, c);
                W(i, r * m + c) = (cq(lo) - cq(r) * cq(c)) - (cp(lo) - cp(r) * cp(c));
            }
        }
    }
    Eigen::MatrixXd Z(X.rows(), F + 1);
    Z << X, Eigen::VectorXd::Ones(X.rows());
    const Eigen::Index P = m * (F + 1);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(P, P);
    for (Eigen::Index r = 0; r < m; ++r) {
        for (Eigen::Index c = 0; c < m; ++c) {
            const Eigen::MatrixXd block = Z.transpose() * W.col(r * m + c).asDiagonal() * Z;
            for (Eigen::Index a = 0; a <= F; ++a) {
                for (Eigen::Index d = 0; d <= F; ++d) H(r + a * m, c + d * m) = block(a, d);
            }
        }
    }
    for (Eigen::Index k = 0; k < m * F; ++k) H(k, k) -= 2.0 * model.l2_strength;
    return H;
}

struct MtlrFitOptions {
    double l2_strength = 1.0;
    std::vector<double> time_points{1.0, 2.0, 3.0, 4.0, 5.0};
    double learning_rate = 0.05;
    double tolerance = 1e-6;
    int max_iterations = 5000;
    // Below this gradient norm the AMSGrad steps give way to Newton steps.
    double newton_switch = 1e-3;
};

struct MtlrFit {
    MtlrModel model;
    int iterations = 0;
    double gradient_norm = 0.0;  // infinity norm of the mean-scaled gradient
    int newton_steps = 0;
};

/// Gradient ascent with AMSGrad on the objective divided by n, so the step
/// scale and tolerance do not depend on the cohort size. Dividing by n leaves
/// the maximiser unchanged. AMSGrad keeps the largest second moment seen, so
/// its late steps shrink to a slow linear crawl; the objective is concave, and
/// once the gradient is small the remaining iterations are damped Newton steps.
inline MtlrFit mtlr_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& times, const std::vector<bool>& events,
                        const MtlrFitOptions& options = {}) {
    if (X.rows() == 0) throw DataError("mtlr_fit: empty design");
    if (X.rows() != times.size() || std::size_t(X.rows()) != events.size()) throw DataError("mtlr_fit: size mismatch");
    if (!X.allFinite()) throw DataError("mtlr_fit: design has non-finite entries (impute first)");
    MtlrFit fit;
    fit.model = make_mtlr(X.cols(), options.time_points, options.l2_strength);
    const Eigen::Index m = fit.model.m();
    const Eigen::Index F = X.cols();
    const double n = double(X.rows());

    Eigen::VectorXd params = Eigen::VectorXd::Zero(m * F + m);
    Eigen::VectorXd grad(params.size());
    AmsGrad opt(params.size(), {.learning_rate = options.learning_rate});
    auto unpack = [&](const Eigen::VectorXd& v, MtlrModel& model) {
        model.theta = Eigen::Map<const Eigen::MatrixXd>(v.data(), m, F);
        model.b = v.tail(m);
    };
    auto objective = [&](const Eigen::VectorXd& v) {
        MtlrModel trial = fit.model;
        unpack(v, trial);
        return mtlr_objective(trial, X, times, events) / n;
    };
    for (int it = 0; it < options.max_iterations; ++it) {
        unpack(params, fit.model);
        const auto g = mtlr_gradient(fit.model, X, times, events);
        Eigen::Map<Eigen::MatrixXd>(grad.data(), m, F) = g.theta / n;
        grad.tail(m) = g.b / n;
        fit.gradient_norm = grad.lpNorm<Eigen::Infinity>();
        fit.iterations = it;
        if (!std::isfinite(fit.gradient_norm)) throw NumericalError("mtlr_fit: non-finite gradient");
        if (fit.gradient_norm < options.tolerance) return fit;
        if (fit.gradient_norm < options.newton_switch) {
            // Ascent direction from the negated Hessian, with Levenberg damping
            // and step halving until the objective does not decrease.
            const Eigen::MatrixXd A = -mtlr_hessian(fit.model, X, times, events) / n;
            const double current = objective(params);
            bool moved = false;
            for (double mu = 0.0; mu < 1e6 && !moved; mu = mu == 0.0 ? 1e-8 : mu * 100.0) {
                Eigen::LDLT<Eigen::MatrixXd> ldlt(A + mu * Eigen::MatrixXd::Identity(A.rows(), A.cols()));
                if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) continue;
                const Eigen::VectorXd dir = ldlt.solve(grad);
                if (!dir.allFinite()) continue;
                for (double step = 1.0; step > 1e-4; step *= 0.5) {
                    const Eigen::VectorXd trial = params + step * dir;
                    if (objective(trial) >= current) {
                        params = trial;
                        moved = true;
                        break;
                    }
                }
            }
            if (moved) {
                ++fit.newton_steps;
                continue;
            }
        }
        Eigen::VectorXd descent = -grad;
        opt.step(params, descent);
    }
    unpack(params, fit.model);
    throw NumericalError(fmt::format("mtlr_fit: no convergence in {} iterations (gradient inf-norm {:.3g})",
                                     options.max_iterations, fit.gradient_norm));
}

/// S(t_k) = sum_{j >= k} P(j), k = 1..m.
inline Eigen::VectorXd mtlr_survival(const MtlrModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
    const Eigen::VectorXd p = mtlr_log_probs(model, x).array().exp();
    const Eigen::Index m = model.m();
    Eigen::VectorXd s(m);
    double tail = 0.0;
    for (Eigen::Index k = m; k >= 1; --k) {
        tail += p(k);
        s(k - 1) = std::min(tail, 1.0);
    }
    return s;
}

/// Piecewise-linear survival through (0, 1), (t_k, S_k); flat after t_m.
inline double mtlr_survival_at(const MtlrModel& model, const Eigen::VectorXd& curve, double t) {
    if (t <= 0.0) return 1.0;
    double t0 = 0.0;
    double s0 = 1.0;
    for (Eigen::Index k = 0; k < model.m(); ++k) {
        const double t1 = model.time_points[std::size_t(k)];
        if (t <= t1) return s0 + (curve(k) - s0) * (t - t0) / (t1 - t0);
        t0 = t1;
        s0 = curve(k);
    }
    return s0;
}

struct MtlrPointEstimates {
    double mean = 0.0;  // restricted to [0, t_m]
    double pmst = 0.0;  // capped at t_m
};

inline MtlrPointEstimates curve_point_estimates(const MtlrModel& model, const Eigen::VectorXd& curve) {
    MtlrPointEstimates out;
    double t0 = 0.0;
    double s0 = 1.0;
    bool crossed = false;
    for (Eigen::Index k = 0; k < model.m(); ++k) {
        const double t1 = model.time_points[std::size_t(k)];
        const double s1 = curve(k);
        out.mean += 0.5 * (s0 + s1) * (t1 - t0);
        if (!crossed && s1 <= 0.5) {
            out.pmst = s0 == s1 ? t0 : t0 + (s0 - 0.5) / (s0 - s1) * (t1 - t0);
            crossed = true;
        }
        t0 = t1;
        s0 = s1;
    }
    if (!crossed) out.pmst = model.time_points.back();
    return out;
}

inline MtlrPointEstimates mtlr_point_estimates(const MtlrModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
    return curve_point_estimates(model, mtlr_survival(model, x));
}

}  // namespace grudw

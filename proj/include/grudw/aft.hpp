#pragma once

// Weibull accelerated failure time model: ln tau = x'beta + sigma * eps with
// eps standard minimum-extreme-value, so tau ~ Weibull(kappa = 1/sigma,
// lambda = exp(x'beta)). Fitted by damped Newton over (beta, log sigma).

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "error.hpp"
#include "weibull.hpp"

namespace grudw {

struct AftModel {
    Eigen::VectorXd beta;  // intercept first, then one per design column
    double sigma = 1.0;
    Eigen::VectorXd std_errors;  // per beta entry
    Eigen::VectorXd p_values;    // two-sided Wald
    double sigma_std_error = std::numeric_limits<double>::quiet_NaN();
    Eigen::MatrixXd covariance;  // over (beta, log sigma), or beta alone when sigma was fixed
    int iterations = 0;
    double loglik = 0.0;

    double kappa() const { return 1.0 / sigma; }
};

struct AftData {
    const Eigen::MatrixXd& X;  // without intercept column
    const Eigen::VectorXd& times;
    const std::vector<bool>& events;
};

namespace detail {

inline void check_aft_data(const AftData& d) {
    if (d.X.rows() != d.times.size() || std::size_t(d.X.rows()) != d.events.size()) {
        throw DataError("aft: design, times and events differ in length");
    }
    for (Eigen::Index i = 0; i < d.times.size(); ++i) {
        if (!(d.times(i) > 0.0)) throw DataError(fmt::format("aft: time must be > 0 (row {})", i));
    }
}

inline double linear_predictor(const Eigen::VectorXd& beta, const Eigen::MatrixXd& X, Eigen::Index i) {
    return beta(0) + X.row(i).dot(beta.tail(beta.size() - 1));
}

}  // namespace detail

/// Extreme-value form: uncensored -log sigma - ln tau + z - e^z, censored -e^z,
/// with z = (ln tau - x'beta) / sigma.
inline double aft_loglik(const Eigen::VectorXd& beta, double sigma, const AftData& d) {
    detail::check_aft_data(d);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
        const double lt = std::log(d.times(i));
        const double z = (lt - detail::linear_predictor(beta, d.X, i)) / sigma;
        ll += d.events[std::size_t(i)] ? -std::log(sigma) - lt + z - std::exp(z) : -std::exp(z);
    }
    return ll;
}

inline double aft_loglik(const AftModel& model, const AftData& d) { return aft_loglik(model.beta, model.sigma, d); }

/// The same quantity through the Weibull density and survival functions.
inline double aft_loglik_weibull(const Eigen::VectorXd& beta, double sigma, const AftData& d) {
    detail::check_aft_data(d);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
        const WeibullParams p(1.0 / sigma, std::exp(detail::linear_predictor(beta, d.X, i)));
        ll += d.events[std::size_t(i)] ? log_pdf(p, d.times(i)) : std::log(survival(p, d.times(i)));
    }
    return ll;
}

struct AftDerivatives {
    double loglik = 0.0;
    Eigen::VectorXd gradient;  // over (beta, log sigma)
    Eigen::MatrixXd hessian;
};

inline AftDerivatives aft_derivatives(const Eigen::VectorXd& beta, double log_sigma, const AftData& d) {
    detail::check_aft_data(d);
    const Eigen::Index p = beta.size();
    const double sigma = std::exp(log_sigma);
    AftDerivatives out;
    out.gradient = Eigen::VectorXd::Zero(p + 1);
    out.hessian = Eigen::MatrixXd::Zero(p + 1, p + 1);
    Eigen::VectorXd x(p);
    for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
        x(0) = 1.0;
        x.tail(p - 1) = d.X.row(i).transpose();
        const double lt = std::log(d.times(i));
        const double z = (lt - beta.dot(x)) / sigma;
        const double ez = std::exp(z);
        const double delta = d.events[std::size_t(i)] ? 1.0 : 0.0;
        const double g = delta - ez;  // d loglik_i / dz
        out.loglik += delta * (-log_sigma - lt + z) - ez;
        out.gradient.head(p) -= g / sigma * x;
        out.gradient(p) += -delta - z * g;
        out.hessian.topLeftCorner(p, p).noalias() -= (ez / (sigma * sigma)) * x * x.transpose();
        const Eigen::VectorXd cross = (g - z * ez) / sigma * x;
        out.hessian.col(p).head(p) += cross;
        out.hessian.row(p).head(p) += cross.transpose();
        out.hessian(p, p) += z * g - z * z * ez;
    }
    return out;
}

struct AftFitOptions {
    std::optional<double> fixed_sigma;
    double tolerance = 1e-8;
    int max_iterations = 200;
};

/// Damped Newton with step halving; each accepted step does not decrease the
/// log-likelihood. Standard errors come from the inverse observed information.
inline AftModel aft_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& times, const std::vector<bool>& events,
                        const AftFitOptions& options = {}) {
    const AftData d{X, times, events};
    detail::check_aft_data(d);
    if (X.rows() == 0) throw DataError("aft_fit: empty design");
    if (!X.allFinite()) throw DataError("aft_fit: design has non-finite entries (impute first)");
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        if (X.col(c).cwiseAbs().maxCoeff() == 0.0) throw DataError(fmt::format("aft_fit: column {} is all zero", c));
    }
    const Eigen::Index p = X.cols() + 1;
    const bool fix = options.fixed_sigma.has_value();
    if (fix && !(*options.fixed_sigma > 0.0)) throw DataError("aft_fit: fixed sigma must be > 0");
    const Eigen::Index n_free = fix ? p : p + 1;

    // Start from the exponential fit of the intercept: exp(beta0) = mean time.
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(p + 1);
    double event_count = 0.0;
    for (bool e : events) event_count += e ? 1.0 : 0.0;
    theta(0) = std::log(times.sum() / std::max(event_count, 1.0));
    theta(p) = fix ? std::log(*options.fixed_sigma) : 0.0;

    auto eval = [&](const Eigen::VectorXd& th) { return aft_derivatives(th.head(p), th(p), d); };
    AftDerivatives cur = eval(theta);
    AftModel model;
    for (int it = 0;; ++it) {
        const Eigen::VectorXd grad = cur.gradient.head(n_free);
        const double gnorm = grad.lpNorm<Eigen::Infinity>();
        if (!std::isfinite(gnorm)) throw NumericalError("aft_fit: non-finite gradient");
        if (gnorm < options.tolerance) {
            model.iterations = it;
            break;
        }
        if (it >= options.max_iterations) {
            throw NumericalError(
                fmt::format("aft_fit: no convergence in {} iterations (gradient inf-norm {:.3g})", it, gnorm));
        }
        // Newton direction on the negative Hessian, with Levenberg damping when
        // it is not positive definite.
        Eigen::MatrixXd info = -cur.hessian.topLeftCorner(n_free, n_free);
        Eigen::VectorXd step;
        double mu = 0.0;
        for (int tries = 0; tries < 60; ++tries) {
            Eigen::LLT<Eigen::MatrixXd> llt(info + mu * Eigen::MatrixXd::Identity(n_free, n_free));
            if (llt.info() == Eigen::Success) {
                step = llt.solve(grad);
                if (step.allFinite()) break;
            }
            mu = mu == 0.0 ? 1e-6 * std::max(1.0, info.diagonal().cwiseAbs().maxCoeff()) : mu * 10.0;
            step.resize(0);
        }
        if (step.size() == 0) throw NumericalError("aft_fit: information matrix could not be regularised");
        double scale = 1.0;
        bool accepted = false;
        for (int h = 0; h < 60; ++h) {
            Eigen::VectorXd trial = theta;
            trial.head(n_free) += scale * step;
            const AftDerivatives next = eval(trial);
            // Near the optimum the change in log-likelihood drops below
            // rounding; there a shrinking gradient decides.
            const bool flat = std::abs(next.loglik - cur.loglik) <= 1e-12 * (1.0 + std::abs(cur.loglik));
            if (std::isfinite(next.loglik) &&
                (next.loglik >= cur.loglik ||
                 (flat && next.gradient.head(n_free).lpNorm<Eigen::Infinity>() < gnorm))) {
                theta = trial;
                cur = next;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if (!accepted) {
            throw NumericalError(fmt::format("aft_fit: line search failed (gradient inf-norm {:.3g})", gnorm));
        }
    }

    model.beta = theta.head(p);
    model.sigma = std::exp(theta(p));
    model.loglik = cur.loglik;
    const Eigen::MatrixXd info = -cur.hessian.topLeftCorner(n_free, n_free);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
    if (!lu.isInvertible()) throw NumericalError("aft_fit: singular information matrix");
    model.covariance = lu.inverse();
    model.std_errors = model.covariance.diagonal().head(p).cwiseMax(0.0).cwiseSqrt();
    model.p_values.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        model.p_values(j) = std::erfc(std::abs(model.beta(j) / model.std_errors(j)) / std::sqrt(2.0));
    }
    if (!fix) model.sigma_std_error = model.sigma * std::sqrt(std::max(model.covariance(p, p), 0.0));
    return model;
}

inline WeibullParams aft_predict(const AftModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
    return {model.kappa(), std::exp(model.beta(0) + x.dot(model.beta.tail(model.beta.size() - 1)))};
}

}  // namespace grudw

#pragma once

// Two-parameter Weibull distribution: densities, point summaries, the
// conditional-expectation "best guess" for censored subjects, and the
// composite training loss (negative log density + squared log error of the
// median) with analytic gradients.
//
// Shape is kappa, scale is lambda (years). All arithmetic is double.

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>

namespace grudw {

class WeibullParams {
public:
    WeibullParams(double kappa, double lambda) : kappa_(kappa), lambda_(lambda) {
        if (!(kappa > 0.0) || !(lambda > 0.0) || !std::isfinite(kappa) || !std::isfinite(lambda)) {
            throw std::invalid_argument("WeibullParams: kappa and lambda must be finite and positive (kappa=" +
                                        std::to_string(kappa) + ", lambda=" + std::to_string(lambda) + ")");
        }
    }

    double kappa() const noexcept { return kappa_; }
    double lambda() const noexcept { return lambda_; }

    friend bool operator==(const WeibullParams&, const WeibullParams&) = default;

private:
    double kappa_;
    double lambda_;
};

namespace detail {

inline void require_nonnegative_time(double tau, const char* what) {
    if (!(tau >= 0.0)) throw std::domain_error(std::string(what) + ": time must be >= 0");
}

inline constexpr double kLn2 = std::numbers::ln2;

// Regularised lower series: returns sum_{n>=0} x^n / (s (s+1) ... (s+n)).
inline double lower_gamma_series(double s, double x) {
    double term = 1.0 / s;
    double sum = term;
    for (int n = 1; n < 10000; ++n) {
        term *= x / (s + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-17) break;
    }
    return sum;
}

// Modified Lentz evaluation of the continued fraction for Gamma(s, x) e^x x^-s.
inline double upper_gamma_fraction(double s, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - s;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -i * (i - s);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) break;
    }
    return h;
}

inline void check_gamma_args(double s, double x) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::domain_error("upper_incomplete_gamma: s must be > 0");
    if (!(x >= 0.0)) throw std::domain_error("upper_incomplete_gamma: x must be >= 0");
}

}  // namespace detail

/// Upper incomplete gamma function Gamma(s, x) = integral_x^inf t^(s-1) e^-t dt.
/// Series for x < s + 1, continued fraction otherwise.
inline double upper_incomplete_gamma(double s, double x) {
    detail::check_gamma_args(s, x);
    if (x == 0.0) return std::tgamma(s);
    if (x < s + 1.0) {
        const double lower = detail::lower_gamma_series(s, x) * std::exp(-x + s * std::log(x));
        return std::tgamma(s) - lower;
    }
    return std::exp(-x + s * std::log(x)) * detail::upper_gamma_fraction(s, x);
}

/// Gamma(s, x) * e^x, which stays representable when both factors would not.
inline double upper_incomplete_gamma_scaled(double s, double x) {
    detail::check_gamma_args(s, x);
    if (x == 0.0) return std::tgamma(s);
    if (x < s + 1.0) {
        return std::tgamma(s) * std::exp(x) - detail::lower_gamma_series(s, x) * std::exp(s * std::log(x));
    }
    return std::exp(s * std::log(x)) * detail::upper_gamma_fraction(s, x);
}

/// Regularised upper incomplete gamma Q(s, x) = Gamma(s, x) / Gamma(s).
inline double regularized_upper_gamma(double s, double x) {
    detail::check_gamma_args(s, x);
    if (x == 0.0) return 1.0;
    if (x < s + 1.0) {
        const double p = detail::lower_gamma_series(s, x) * std::exp(-x + s * std::log(x) - std::lgamma(s));
        return 1.0 - p;
    }
    return std::exp(-x + s * std::log(x) - std::lgamma(s)) * detail::upper_gamma_fraction(s, x);
}

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
inline double chi_square_sf(double statistic, double df) {
    if (statistic <= 0.0) return 1.0;
    return regularized_upper_gamma(0.5 * df, 0.5 * statistic);
}

inline double survival(const WeibullParams& p, double tau) {
    detail::require_nonnegative_time(tau, "survival");
    return std::exp(-std::pow(tau / p.lambda(), p.kappa()));
}

/// Log density. At tau = 0 it is +inf for kappa < 1, -log(lambda) for
/// kappa = 1 and -inf for kappa > 1.
inline double log_pdf(const WeibullParams& p, double tau) {
    detail::require_nonnegative_time(tau, "pdf");
    const double k = p.kappa();
    const double l = p.lambda();
    if (tau == 0.0) {
        if (k < 1.0) return std::numeric_limits<double>::infinity();
        if (k == 1.0) return -std::log(l);
        return -std::numeric_limits<double>::infinity();
    }
    const double log_ratio = std::log(tau) - std::log(l);
    return std::log(k) - std::log(l) + (k - 1.0) * log_ratio - std::exp(k * log_ratio);
}

/// Density f(tau) = (k/l)(tau/l)^(k-1) exp(-(tau/l)^k). Returns +inf (the
/// singular value) at tau = 0 when kappa < 1.
inline double pdf(const WeibullParams& p, double tau) {
    return std::exp(log_pdf(p, tau));
}

inline double hazard(const WeibullParams& p, double tau) {
    detail::require_nonnegative_time(tau, "hazard");
    const double k = p.kappa();
    const double l = p.lambda();
    if (tau == 0.0) {
        if (k < 1.0) return std::numeric_limits<double>::infinity();
        return k == 1.0 ? 1.0 / l : 0.0;
    }
    return (k / l) * std::pow(tau / l, k - 1.0);
}

inline double median(const WeibullParams& p) {
    return p.lambda() * std::pow(detail::kLn2, 1.0 / p.kappa());
}

struct WeibullSummaries {
    double median;
    std::optional<double> mode;  // absent when kappa < 1
    double mean;
};

inline WeibullSummaries summaries(const WeibullParams& p) {
    const double k = p.kappa();
    const double l = p.lambda();
    std::optional<double> mode;
    if (k == 1.0) {
        mode = 0.0;
    } else if (k > 1.0) {
        mode = l * std::pow((k - 1.0) / k, 1.0 / k);
    }
    return {median(p), mode, l * std::tgamma(1.0 + 1.0 / k)};
}

/// Shape at which mode and median coincide: (k - 1) / k = ln 2. The result
/// does not depend on the scale or on the target time.
inline double kappa_where_mode_equals_median() {
    auto gap = [](double k) { return (k - 1.0) / k - detail::kLn2; };
    double lo = 1.01;
    double hi = 20.0;
    while (hi - lo > 1e-12) {
        const double mid = 0.5 * (lo + hi);
        if (gap(mid) < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

/// E[tau | tau > c] = c + (lambda/kappa) Gamma(1/kappa, (c/lambda)^kappa) / S(c).
/// When S(c) underflows below 1e-300 the asymptotic mean residual life
/// lambda^kappa / kappa * c^(1-kappa) is used instead.
inline double best_guess(const WeibullParams& p, double c) {
    if (!(c >= 0.0)) throw std::domain_error("best_guess: censoring time must be >= 0");
    const double k = p.kappa();
    const double l = p.lambda();
    const double z = std::pow(c / l, k);
    if (std::exp(-z) < 1e-300) {
        return c + std::pow(l, k) / k * std::pow(c, 1.0 - k);
    }
    return c + (l / k) * upper_incomplete_gamma_scaled(1.0 / k, z);
}

struct LossTerms {
    double neglog = 0.0;
    double msle = 0.0;
    double total = 0.0;
    bool finite = true;
};

struct LossGradient {
    double d_kappa = 0.0;
    double d_lambda = 0.0;
    double neglog_d_kappa = 0.0;
    double neglog_d_lambda = 0.0;
    bool finite = true;
};

/// -log f(tau) plus (log(tau + 1) - log(median + 1))^2.
inline LossTerms composite_loss(const WeibullParams& p, double tau) {
    if (!(tau > 0.0)) throw std::domain_error("composite_loss: tau must be > 0");
    LossTerms out;
    out.neglog = -log_pdf(p, tau);
    const double diff = std::log1p(tau) - std::log1p(median(p));
    out.msle = diff * diff;
    out.total = out.neglog + out.msle;
    out.finite = std::isfinite(out.total);
    return out;
}

inline LossGradient composite_loss_grad(const WeibullParams& p, double tau) {
    if (!(tau > 0.0)) throw std::domain_error("composite_loss_grad: tau must be > 0");
    const double k = p.kappa();
    const double l = p.lambda();
    const double log_ratio = std::log(tau) - std::log(l);
    const double z = std::exp(k * log_ratio);

    LossGradient g;
    g.neglog_d_kappa = -1.0 / k - log_ratio + z * log_ratio;
    g.neglog_d_lambda = (k - k * z) / l;

    const double med = median(p);
    const double diff = std::log1p(tau) - std::log1p(med);
    const double d_med = -2.0 * diff / (1.0 + med);
    const double med_d_lambda = std::pow(detail::kLn2, 1.0 / k);
    const double med_d_kappa = -med * std::log(detail::kLn2) / (k * k);

    g.d_kappa = g.neglog_d_kappa + d_med * med_d_kappa;
    g.d_lambda = g.neglog_d_lambda + d_med * med_d_lambda;
    g.finite = std::isfinite(g.d_kappa) && std::isfinite(g.d_lambda);
    return g;
}

}  // namespace grudw

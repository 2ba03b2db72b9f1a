#pragma once

// Independent reference implementations used by the tests: tanh-sinh
// quadrature, central differences, and brute-force versions of the ranking
// and calibration metrics.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

namespace oracle {

/// Tanh-sinh quadrature on [a, b]; tolerates integrable endpoint
/// singularities. Halves the step until successive estimates agree.
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-13) {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    auto node_sum = [&](double h, int k_start, int k_step) {
        double s = 0.0;
        for (int k = k_start;; k += k_step) {
            const double t = k * h;
            const double u = 0.5 * std::numbers::pi * std::sinh(t);
            const double cu = std::cosh(u);
            const double w = 0.5 * std::numbers::pi * std::cosh(t) / (cu * cu);
            const double x = std::tanh(u);
            // Distance to each endpoint, computed without cancellation.
            const double dist = half / (std::exp(u) * cu);
            double term = 0.0;
            if (dist > 0.0) {
                const double xr = b - dist;
                const double xl = a + dist;
                const double fr = k == 0 ? f(mid) : f(xr);
                const double fl = k == 0 ? 0.0 : f(xl);
                term = w * (fr + fl);
            }
            s += term;
            if (k > 0 && (w < 1e-300 || std::abs(x) >= 1.0 || dist == 0.0)) break;
            if (t > 6.5) break;
        }
        return s;
    };
    double h = 0.5;
    double sum = node_sum(h, 0, 1);
    double est = half * h * sum;
    for (int level = 0; level < 12; ++level) {
        h *= 0.5;
        sum += node_sum(h, 1, 2);
        const double next = half * h * sum;
        if (std::abs(next - est) <= tol * std::max(1.0, std::abs(next))) return next;
        est = next;
    }
    return est;
}

/// Integral over [a, inf) by the map x = a + t / (1 - t).
inline double integrate_to_inf(const std::function<double(double)>& f, double a, double tol = 1e-13) {
    return integrate(
        [&](double t) {
            if (t >= 1.0) return 0.0;
            const double one_minus = 1.0 - t;
            const double x = a + t / one_minus;
            const double v = f(x) / (one_minus * one_minus);
            return std::isfinite(v) ? v : 0.0;
        },
        0.0, 1.0, tol);
}

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / scale;
}

struct PairCounts {
    std::int64_t comparable = 0;
    std::int64_t concordant = 0;
    std::int64_t tied = 0;
    double c() const { return (double(concordant) + 0.5 * double(tied)) / double(comparable); }
};

/// O(n^2) Harrell enumeration.
inline PairCounts brute_harrell(const std::vector<double>& score, const std::vector<double>& time,
                                const std::vector<bool>& event) {
    PairCounts p;
    for (std::size_t i = 0; i < time.size(); ++i) {
        if (!event[i]) continue;
        for (std::size_t j = 0; j < time.size(); ++j) {
            if (!(time[i] < time[j])) continue;
            ++p.comparable;
            if (score[i] < score[j]) {
                ++p.concordant;
            } else if (score[i] == score[j]) {
                ++p.tied;
            }
        }
    }
    return p;
}

/// Pairwise AUC: positives had the event by tau, negatives outlived tau.
inline double brute_auroc(const std::vector<double>& prob, const std::vector<double>& time,
                          const std::vector<bool>& event, double tau) {
    std::int64_t wins = 0, ties = 0, pairs = 0;
    for (std::size_t i = 0; i < time.size(); ++i) {
        if (!(time[i] <= tau && event[i])) continue;
        for (std::size_t j = 0; j < time.size(); ++j) {
            if (!(time[j] > tau)) continue;
            ++pairs;
            if (prob[i] > prob[j]) {
                ++wins;
            } else if (prob[i] == prob[j]) {
                ++ties;
            }
        }
    }
    return (double(wins) + 0.5 * double(ties)) / double(pairs);
}

/// Product-limit value by direct enumeration of the distinct jump times.
/// With `strict` the product runs over jump times < t (left limit).
inline double brute_km(const std::vector<double>& time, const std::vector<bool>& flag, double t, bool strict) {
    double s = 1.0;
    std::vector<double> seen;
    for (std::size_t i = 0; i < time.size(); ++i) {
        if (!flag[i]) continue;
        const double u = time[i];
        if (strict ? !(u < t) : !(u <= t)) continue;
        bool dup = false;
        for (double v : seen) dup = dup || v == u;
        if (dup) continue;
        seen.push_back(u);
    }
    std::sort(seen.begin(), seen.end());
    for (double u : seen) {
        double at_risk = 0.0, d = 0.0;
        for (std::size_t i = 0; i < time.size(); ++i) {
            if (time[i] >= u) at_risk += 1.0;
            if (time[i] == u && flag[i]) d += 1.0;
        }
        s *= 1.0 - d / at_risk;
    }
    return s;
}

/// Term-by-term IPCW Brier score.
inline double literal_brier(const std::vector<double>& surv, const std::vector<double>& time,
                            const std::vector<bool>& event, double tau) {
    std::vector<bool> cens(event.size());
    for (std::size_t i = 0; i < event.size(); ++i) cens[i] = !event[i];
    double sum = 0.0;
    for (std::size_t i = 0; i < time.size(); ++i) {
        const double a = (time[i] <= tau && event[i]) ? 1.0 : 0.0;
        const double b = time[i] > tau ? 1.0 : 0.0;
        double term = 0.0;
        if (a > 0.0) term += a * surv[i] * surv[i] / brute_km(time, cens, time[i], true);
        if (b > 0.0) term += b * (1.0 - surv[i]) * (1.0 - surv[i]) / brute_km(time, cens, tau, false);
        sum += term;
    }
    return sum / double(time.size());
}

}  // namespace oracle

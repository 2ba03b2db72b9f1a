#pragma once

// Censored-data evaluation metrics. Times are in years; a higher score means
// longer predicted survival.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include <fmt/format.h>

#include "error.hpp"
#include "weibull.hpp"

namespace grudw {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

namespace detail {

inline void check_lengths(std::size_t a, std::size_t b, std::size_t c, const char* what) {
    if (a != b || b != c) throw DataError(std::string(what) + ": input lengths differ");
}

}  // namespace detail

/// Product-limit estimate. At a tied time, events are removed before
/// censorings, so the censored patients still count as at risk.
class KaplanMeier {
public:
    KaplanMeier(const std::vector<double>& times, const std::vector<bool>& events) {
        if (times.empty()) throw DataError("kaplan_meier: empty input");
        if (times.size() != events.size()) throw DataError("kaplan_meier: input lengths differ");
        std::vector<std::size_t> order(times.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
        double s = 1.0;
        std::size_t at_risk = times.size();
        for (std::size_t i = 0; i < order.size();) {
            const double t = times[order[i]];
            std::size_t deaths = 0;
            std::size_t j = i;
            for (; j < order.size() && times[order[j]] == t; ++j) deaths += events[order[j]] ? 1 : 0;
            if (deaths > 0) {
                s *= 1.0 - double(deaths) / double(at_risk);
                t_.push_back(t);
                s_.push_back(s);
            }
            at_risk -= j - i;
            i = j;
        }
    }

    /// Right-continuous S(t).
    double operator()(double t) const {
        const auto it = std::upper_bound(t_.begin(), t_.end(), t);
        return it == t_.begin() ? 1.0 : s_[std::size_t(it - t_.begin()) - 1];
    }

    /// S(t-), the value just before t.
    double left_limit(double t) const {
        const auto it = std::lower_bound(t_.begin(), t_.end(), t);
        return it == t_.begin() ? 1.0 : s_[std::size_t(it - t_.begin()) - 1];
    }

    const std::vector<double>& jump_times() const noexcept { return t_; }
    const std::vector<double>& values() const noexcept { return s_; }

private:
    std::vector<double> t_;
    std::vector<double> s_;
};

inline KaplanMeier kaplan_meier(const std::vector<double>& times, const std::vector<bool>& events) {
    return {times, events};
}

/// Kaplan-Meier of the censoring distribution.
inline KaplanMeier reverse_kaplan_meier(const std::vector<double>& times, const std::vector<bool>& events) {
    std::vector<bool> flipped(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) flipped[i] = !events[i];
    return {times, flipped};
}

// ---------------------------------------------------------------------------

struct ConcordanceResult {
    double c = kNaN;
    std::int64_t comparable = 0;
    std::int64_t concordant = 0;
    std::int64_t tied = 0;
};

namespace detail {

class Fenwick {
public:
    explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
    void add(std::size_t i) {
        for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
    }
    // Count of inserted ranks < i.
    std::int64_t prefix(std::size_t i) const {
        std::int64_t s = 0;
        for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
        return s;
    }

private:
    std::vector<std::int64_t> tree_;
};

}  // namespace detail

/// Pairs (i, j) with t_i < t_j and i an event are comparable; concordant when
/// score_i < score_j, half credit for tied scores. O(n log n).
inline ConcordanceResult harrell_c(const std::vector<double>& scores, const std::vector<double>& times,
                                   const std::vector<bool>& events) {
    detail::check_lengths(scores.size(), times.size(), events.size(), "harrell_c");
    const std::size_t n = scores.size();
    std::vector<double> sorted_scores = scores;
    std::sort(sorted_scores.begin(), sorted_scores.end());
    sorted_scores.erase(std::unique(sorted_scores.begin(), sorted_scores.end()), sorted_scores.end());
    auto rank = [&](double s) {
        return std::size_t(std::lower_bound(sorted_scores.begin(), sorted_scores.end(), s) - sorted_scores.begin());
    };
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });

    ConcordanceResult r;
    detail::Fenwick tree(sorted_scores.size());
    std::int64_t inserted = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && times[order[j]] == times[order[i]]) ++j;
        for (std::size_t k = i; k < j; ++k) {
            const std::size_t p = order[k];
            if (!events[p]) continue;
            const std::size_t rk = rank(scores[p]);
            const std::int64_t below = tree.prefix(rk);
            const std::int64_t at_or_below = tree.prefix(rk + 1);
            r.comparable += inserted;
            r.tied += at_or_below - below;
            r.concordant += inserted - at_or_below;
        }
        for (std::size_t k = i; k < j; ++k) {
            tree.add(rank(scores[order[k]]));
            ++inserted;
        }
        i = j;
    }
    if (r.comparable == 0) throw DataError("harrell_c: no comparable pairs");
    r.c = (double(r.concordant) + 0.5 * double(r.tied)) / double(r.comparable);
    return r;
}

/// Harrell's C after administrative censoring at tau.
inline ConcordanceResult c_tau(const std::vector<double>& scores, const std::vector<double>& times,
                               const std::vector<bool>& events, double tau) {
    detail::check_lengths(scores.size(), times.size(), events.size(), "c_tau");
    std::vector<double> t(times.size());
    std::vector<bool> e(events.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
        t[i] = std::min(times[i], tau);
        e[i] = events[i] && times[i] <= tau;
    }
    return harrell_c(scores, t, e);
}

// ---------------------------------------------------------------------------

struct AucResult {
    double auc = kNaN;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::size_t excluded = 0;
};

/// Positives had the event by tau*, negatives are still under observation past
/// tau*, patients censored by tau* are dropped. Mann-Whitney with mid-ranks.
inline AucResult horizon_auroc(const std::vector<double>& event_probs, const std::vector<double>& times,
                               const std::vector<bool>& events, double tau_star) {
    detail::check_lengths(event_probs.size(), times.size(), events.size(), "horizon_auroc");
    struct Item {
        double p;
        bool positive;
    };
    std::vector<Item> items;
    AucResult r;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] <= tau_star) {
            if (events[i]) {
                items.push_back({event_probs[i], true});
                ++r.positives;
            } else {
                ++r.excluded;
            }
        } else {
            items.push_back({event_probs[i], false});
            ++r.negatives;
        }
    }
    if (r.positives == 0) throw DataError("horizon_auroc: no positive patients (events by the horizon)");
    if (r.negatives == 0) throw DataError("horizon_auroc: no negative patients (followed past the horizon)");
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.p < b.p; });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < items.size();) {
        std::size_t j = i;
        std::size_t pos = 0;
        while (j < items.size() && items[j].p == items[i].p) pos += items[j++].positive ? 1 : 0;
        const double mid_rank = 0.5 * double(i + 1 + j);
        rank_sum += mid_rank * double(pos);
        i = j;
    }
    const double np = double(r.positives);
    const double u = rank_sum - np * (np + 1.0) / 2.0;
    r.auc = u / (np * double(r.negatives));
    return r;
}

// ---------------------------------------------------------------------------

struct L1Summary {
    std::size_t n_uncensored = 0;
    std::optional<double> mean_abs;      // mean |pmst - tau| over uncensored
    std::optional<double> median_abs;
    std::optional<double> sd_abs;        // sample SD of |pmst - tau|
    std::optional<double> positive_mean; // mean (pmst - tau) over overestimates
    std::optional<double> negative_mean; // mean (pmst - tau) over underestimates (negative)
    std::size_t n_censored = 0;
    std::optional<double> margin_mean;   // mean |BG - pmst| over censored
};

/// `bg_totals` is read for censored patients only.
inline L1Summary l1_losses(const std::vector<double>& pmst, const std::vector<double>& times,
                           const std::vector<bool>& events, const std::vector<double>& bg_totals) {
    detail::check_lengths(pmst.size(), times.size(), events.size(), "l1_losses");
    if (bg_totals.size() != pmst.size()) throw DataError("l1_losses: bg_totals length differs");
    L1Summary s;
    std::vector<double> abs_err;
    double pos_sum = 0.0, neg_sum = 0.0, margin_sum = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < pmst.size(); ++i) {
        if (events[i]) {
            const double diff = pmst[i] - times[i];
            abs_err.push_back(std::abs(diff));
            if (diff > 0.0) {
                pos_sum += diff;
                ++n_pos;
            } else if (diff < 0.0) {
                neg_sum += diff;
                ++n_neg;
            }
        } else {
            margin_sum += std::abs(bg_totals[i] - pmst[i]);
            ++s.n_censored;
        }
    }
    s.n_uncensored = abs_err.size();
    if (!abs_err.empty()) {
        const double n = double(abs_err.size());
        double sum = 0.0;
        for (double v : abs_err) sum += v;
        const double mean = sum / n;
        s.mean_abs = mean;
        double ss = 0.0;
        for (double v : abs_err) ss += (v - mean) * (v - mean);
        s.sd_abs = abs_err.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        auto sorted = abs_err;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t h = sorted.size() / 2;
        s.median_abs = sorted.size() % 2 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
    }
    if (n_pos > 0) s.positive_mean = pos_sum / double(n_pos);
    if (n_neg > 0) s.negative_mean = neg_sum / double(n_neg);
    if (s.n_censored > 0) s.margin_mean = margin_sum / double(s.n_censored);
    return s;
}

// ---------------------------------------------------------------------------

struct BinStats {
    std::size_t n = 0;
    double mean_event_prob = 0.0;  // mean of 1 - predicted survival
    double km_survival = 1.0;      // observed survival at tau* within the bin
};

struct HosmerLemeshowResult {
    double statistic = kNaN;
    double p_value = kNaN;  // NaN when B <= 2
    std::vector<BinStats> bins;
    std::size_t clamped_bins = 0;
};

inline constexpr double kHlClamp = 1e-8;

/// Patients sorted by predicted survival (ties by time, then event flag) are
/// cut into B bins whose sizes differ by at most one, larger bins first.
inline HosmerLemeshowResult hosmer_lemeshow(const std::vector<double>& survival_probs,
                                            const std::vector<double>& times, const std::vector<bool>& events,
                                            double tau_star, std::size_t bins = 10) {
    detail::check_lengths(survival_probs.size(), times.size(), events.size(), "hosmer_lemeshow");
    const std::size_t n = survival_probs.size();
    if (bins < 1 || n < bins) throw DataError(fmt::format("hosmer_lemeshow: need at least {} patients", bins));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (survival_probs[a] != survival_probs[b]) return survival_probs[a] < survival_probs[b];
        if (times[a] != times[b]) return times[a] < times[b];
        return events[a] < events[b];
    });
    HosmerLemeshowResult r;
    r.statistic = 0.0;
    std::size_t start = 0;
    for (std::size_t b = 0; b < bins; ++b) {
        const std::size_t size = n / bins + (b < n % bins ? 1 : 0);
        std::vector<double> bt;
        std::vector<bool> be;
        double p_sum = 0.0;
        for (std::size_t k = start; k < start + size; ++k) {
            const std::size_t i = order[k];
            bt.push_back(times[i]);
            be.push_back(events[i]);
            p_sum += 1.0 - survival_probs[i];
        }
        start += size;
        BinStats s;
        s.n = size;
        s.mean_event_prob = p_sum / double(size);
        s.km_survival = KaplanMeier(bt, be)(tau_star);
        double p = s.mean_event_prob;
        if (p < kHlClamp || p > 1.0 - kHlClamp) {
            p = std::clamp(p, kHlClamp, 1.0 - kHlClamp);
            ++r.clamped_bins;
        }
        const double nb = double(size);
        const double num = nb * (1.0 - s.km_survival) - nb * s.mean_event_prob;
        r.statistic += num * num / (nb * p * (1.0 - p));
        r.bins.push_back(s);
    }
    if (bins > 2) r.p_value = chi_square_sf(r.statistic, double(bins - 2));
    return r;
}

// ---------------------------------------------------------------------------

struct BrierResult {
    double score = kNaN;
    std::size_t n_used = 0;
    std::size_t n_dropped = 0;  // censoring survival was zero where needed
};

/// IPCW Brier score at tau*: events by tau* weigh S^2 / G(t_i-), patients
/// still at risk past tau* weigh (1 - S)^2 / G(tau*), censored-before-tau*
/// patients contribute zero. The mean runs over every patient kept.
inline BrierResult brier(const std::vector<double>& survival_probs, const std::vector<double>& times,
                         const std::vector<bool>& events, double tau_star) {
    detail::check_lengths(survival_probs.size(), times.size(), events.size(), "brier");
    if (times.empty()) throw DataError("brier: empty input");
    const auto G = reverse_kaplan_meier(times, events);
    const double g_star = G(tau_star);
    BrierResult r;
    double sum = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double s = survival_probs[i];
        if (times[i] <= tau_star && events[i]) {
            const double g = G.left_limit(times[i]);
            if (!(g > 0.0)) {
                ++r.n_dropped;
                continue;
            }
            sum += s * s / g;
        } else if (times[i] > tau_star) {
            if (!(g_star > 0.0)) {
                ++r.n_dropped;
                continue;
            }
            sum += (1.0 - s) * (1.0 - s) / g_star;
        }
        ++r.n_used;
    }
    if (r.n_used == 0) throw DataError("brier: every patient was dropped");
    r.score = sum / double(r.n_used);
    return r;
}

// ---------------------------------------------------------------------------

/// Fraction of uncensored patients whose time is more than twice, or less than
/// half, the predicted median.
inline double parkes_serious_error(const std::vector<double>& pmst, const std::vector<double>& times,
                                   const std::vector<bool>& events) {
    detail::check_lengths(pmst.size(), times.size(), events.size(), "parkes_serious_error");
    std::size_t n = 0;
    std::size_t serious = 0;
    for (std::size_t i = 0; i < pmst.size(); ++i) {
        if (!events[i]) continue;
        ++n;
        if (times[i] > 2.0 * pmst[i] || times[i] < 0.5 * pmst[i]) ++serious;
    }
    if (n == 0) throw DataError("parkes_serious_error: no uncensored patients");
    return double(serious) / double(n);
}

}  // namespace grudw
